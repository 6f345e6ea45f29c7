#include "peft/cli/report.hpp"

#include <optional>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace peft {
namespace {

std::string num(double x) { return fmt::format("{:.17g}", x); }
std::string num(const std::optional<double>& x) { return x ? num(*x) : std::string(); }

nlohmann::ordered_json opt_json(const std::optional<double>& x) { return x ? nlohmann::ordered_json(*x) : nlohmann::ordered_json(nullptr); }

}  // namespace

std::string metrics_csv(const std::vector<MetricsRecord>& records) {
  std::string out(kMetricsHeader);
  out += '\n';
  for (const auto& r : records) {
    const auto method = method_name(r.method);
    for (std::size_t l = 0; l < r.layers.size(); ++l) {
      const auto& lm = r.layers[l];
      out += fmt::format("{},{},{},{},{},{},{},,,,\n", r.epoch, method, l, num(lm.g_lora), num(lm.g_boft),
                         num(lm.lambda), num(lm.grad_norm));
    }
    out += fmt::format("{},{},all,{},{},,{},{},{},{},{}\n", r.epoch, method, num(r.g_lora), num(r.g_boft),
                       num(r.grad_norm), num(r.train_loss), num(r.val_loss), num(r.wall_ms), r.param_count);
  }
  return out;
}

std::string sweep_csv(const SweepResult& result) {
  std::string out(kSweepHeader);
  out += '\n';
  for (const auto& c : result.cells) {
    if (c.ok()) {
      const auto& last = c.result.records.back();
      out += fmt::format("run,{},{},ok,{},{},{},{}\n", method_name(c.method), c.seed, num(last.train_loss),
                         num(last.val_loss), num(last.grad_norm), last.param_count);
    } else {
      out += fmt::format("run,{},{},{},,,,\n", method_name(c.method), c.seed, c.result.abort ? "aborted" : "ok");
    }
  }
  for (const auto& a : result.averages) {
    if (a.ok_runs == 0) {
      out += fmt::format("avg,{},,aborted,,,,\n", method_name(a.method));
    } else {
      out += fmt::format("avg,{},,ok,{},{},{},{}\n", method_name(a.method), num(a.train_loss), num(a.val_loss),
                         num(a.grad_norm), num(a.param_count));
    }
  }
  return out;
}

std::string run_summary_json(const RunConfig& cfg, std::uint64_t seed, const TrainResult& result) {
  nlohmann::ordered_json j;
  j["status"] = result.abort ? "aborted" : "ok";
  j["method"] = method_name(cfg.train.method);
  j["seed"] = seed;
  j["epochs_completed"] = result.records.size();
  j["initial_val_loss"] = result.initial_val_loss;
  if (!result.records.empty()) {
    const auto& r = result.records.back();
    nlohmann::ordered_json fin;
    fin["epoch"] = r.epoch;
    fin["train_loss"] = r.train_loss;
    fin["val_loss"] = r.val_loss;
    fin["grad_norm"] = r.grad_norm;
    fin["g_lora"] = opt_json(r.g_lora);
    fin["g_boft"] = opt_json(r.g_boft);
    fin["param_count"] = r.param_count;
    auto& layers = fin["layers"] = nlohmann::ordered_json::array();
    for (const auto& lm : r.layers) {
      layers.push_back({{"g_lora", opt_json(lm.g_lora)},
                        {"g_boft", opt_json(lm.g_boft)},
                        {"lambda", opt_json(lm.lambda)},
                        {"grad_norm", lm.grad_norm}});
    }
    j["final"] = std::move(fin);
  } else {
    j["final"] = nullptr;
  }
  if (result.abort) {
    const auto& a = *result.abort;
    j["abort"] = {{"method", method_name(a.method)},
                  {"epoch", a.epoch},
                  {"layer", a.layer ? nlohmann::ordered_json(*a.layer) : nlohmann::ordered_json(nullptr)},
                  {"reason", a.reason}};
  }
  auto& echo = j["config"] = nlohmann::ordered_json::object();
  std::istringstream lines(serialize_config(cfg));
  for (std::string line; std::getline(lines, line);) {
    const auto eq = line.find(" = ");
    echo[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return j.dump(2) + "\n";
}

}  // namespace peft
