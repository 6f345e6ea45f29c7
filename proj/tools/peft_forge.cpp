#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "peft/cli/commands.hpp"

namespace {

// PEFT_FORGE_LOG: quiet | info | debug (default info).
bool configure_logging() {
  const char* env = std::getenv("PEFT_FORGE_LOG");
  const std::string level = env ? env : "info";
  if (level == "quiet") {
    spdlog::set_level(spdlog::level::off);
  } else if (level == "info") {
    spdlog::set_level(spdlog::level::info);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    std::cerr << "PEFT_FORGE_LOG must be quiet, info or debug (got '" << level << "')\n";
    return false;
  }
  spdlog::set_default_logger(spdlog::stderr_color_mt("peft_forge"));
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  if (!configure_logging()) return peft::kExitConfig;

  CLI::App app{"Parameter-efficient fine-tuning kernels and experiment driver"};
  app.require_subcommand(1);
  peft::CommandOptions opts;
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;

  auto* check = app.add_subcommand("check", "Run the invariant suite");
  check->add_flag_function(
      "--fault", [&](std::int64_t) { opts.fault_cayley = true; }, "Perturb Cayley outputs (detector sanity test)");

  auto* run = app.add_subcommand("run", "Train one method and write metrics, summary and weights");
  auto* sweep = app.add_subcommand("sweep", "Train every method x seed cell and write the comparison table");
  for (auto* sub : {run, sweep}) {
    sub->add_option("config", config_path, "Config file (key = value lines)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "Output directory (overrides out_dir)");
    sub->add_option("--seed", seed, "Seed (overrides seeds)");
  }
  sweep->add_option("--jobs", opts.jobs, "Cells trained in parallel")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);
  for (auto* sub : {run, sweep}) {
    if (sub->count("--out")) opts.out_dir = out_dir;
    if (sub->count("--seed")) opts.seed = seed;
  }

  if (*check) return peft::cmd_check(opts, std::cout);
  if (*run) return peft::cmd_run(config_path, opts, std::cout, std::cerr);
  return peft::cmd_sweep(config_path, opts, std::cout, std::cerr);
}
