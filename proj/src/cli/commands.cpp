#include "peft/cli/commands.hpp"

#include <filesystem>
#include <ostream>

#include <fmt/format.h>

#include "peft/cli/checks.hpp"
#include "peft/cli/config.hpp"
#include "peft/cli/report.hpp"
#include "peft/model/snapshot.hpp"
#include "peft/util/atomic_file.hpp"

namespace peft {
namespace fs = std::filesystem;

namespace {

std::optional<RunConfig> load_config(const std::string& path, const CommandOptions& opts, std::ostream& err) {
  try {
    const auto bytes = read_file_bytes(path);
    auto cfg = parse_config(std::string(bytes.begin(), bytes.end()));
    if (opts.seed) cfg.seeds = {*opts.seed};
    if (opts.out_dir) cfg.out_dir = *opts.out_dir;
    return cfg;
  } catch (const ConfigError& e) {
    err << path << ": " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "cannot read config: " << e.what() << "\n";
  }
  return std::nullopt;
}

bool prepare_dir(const std::string& dir, std::ostream& err) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    err << "cannot create output directory '" << dir << "': " << (ec ? ec.message() : "not a directory") << "\n";
    return false;
  }
  return true;
}

}  // namespace

int cmd_check(const CommandOptions& opts, std::ostream& out) {
  const auto results = run_property_suite(CheckOptions{opts.fault_cayley});
  std::size_t failed = 0;
  for (const auto& r : results) {
    out << fmt::format("{:<36} {}  residual={:.3e}  threshold={:.1e}\n", r.name, r.passed ? "PASS" : "FAIL", r.residual,
                       r.threshold);
    failed += !r.passed;
  }
  out << fmt::format("{} properties, {} failed\n", results.size(), failed);
  return failed ? kExitFailed : kExitOk;
}

int cmd_run(const std::string& config_path, const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  const auto cfg = load_config(config_path, opts, err);
  if (!cfg) return kExitConfig;
  if (!prepare_dir(cfg->out_dir, err)) return kExitIo;

  const std::uint64_t seed = cfg->seeds.front();
  TaskSpec spec = cfg->task;
  spec.seed = seed;
  TrainResult result;
  try {
    result = train(cfg->cell_config(cfg->train.method, seed), cfg->model, make_task(spec), seed);
  } catch (const std::exception& e) {
    err << "run failed: " << e.what() << "\n";
    return kExitFailed;
  }

  const fs::path dir(cfg->out_dir);
  try {
    write_file_atomic(dir / "metrics.csv", metrics_csv(result.records));
    write_file_atomic(dir / "summary.json", run_summary_json(*cfg, seed, result));
    save_snapshot(result.weights, dir / "weights.pfrg");
  } catch (const std::exception& e) {
    err << "write failed: " << e.what() << "\n";
    return kExitIo;
  }
  if (result.abort) {
    const auto& a = *result.abort;
    err << fmt::format("run aborted: method {} epoch {} layer {}: {}\n", method_name(a.method), a.epoch,
                       a.layer ? std::to_string(*a.layer) : "-", a.reason);
    return kExitFailed;
  }
  if (!result.records.empty()) {
    out << fmt::format("{} seed {}: val loss {:.6f} after {} epochs\n", method_name(cfg->train.method), seed,
                       result.records.back().val_loss, result.records.size());
  }
  return kExitOk;
}

int cmd_sweep(const std::string& config_path, const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  const auto cfg = load_config(config_path, opts, err);
  if (!cfg) return kExitConfig;
  if (!prepare_dir(cfg->out_dir, err)) return kExitIo;

  SweepResult result;
  try {
    result = sweep(cfg->sweep_methods(), cfg->seeds, cfg->train, cfg->model, cfg->task, opts.jobs,
                   [&](Method m, std::uint64_t seed, TrainConfig& tc) { tc = cfg->cell_config(m, seed); });
  } catch (const std::exception& e) {
    err << "sweep failed: " << e.what() << "\n";
    return kExitFailed;
  }

  const fs::path dir(cfg->out_dir);
  try {
    write_file_atomic(dir / "sweep.csv", sweep_csv(result));
    for (const auto& c : result.cells) {
      write_file_atomic(dir / fmt::format("metrics_{}_{}.csv", method_name(c.method), c.seed),
                        metrics_csv(c.result.records));
    }
  } catch (const std::exception& e) {
    err << "write failed: " << e.what() << "\n";
    return kExitIo;
  }

  std::size_t aborted = 0;
  for (const auto& c : result.cells) {
    if (c.result.abort) {
      ++aborted;
      err << fmt::format("cell {} seed {} aborted: {}\n", method_name(c.method), c.seed, c.result.abort->reason);
    }
  }
  for (const auto& a : result.averages) {
    out << fmt::format("{:<8} {}/{} ok  val loss {:.6f}  params {}\n", method_name(a.method), a.ok_runs, a.runs,
                       a.val_loss, a.param_count);
  }
  return aborted ? kExitFailed : kExitOk;
}

}  // namespace peft
