#include "peft/harness/sweep.hpp"

#include <atomic>
#include <map>
#include <mutex>
#include <thread>

#include <spdlog/spdlog.h>

#include "peft/numerics/errors.hpp"

namespace peft {

SweepResult sweep(const std::vector<Method>& methods, const std::vector<std::uint64_t>& seeds, const TrainConfig& base,
                  const ModelConfig& mc, const TaskSpec& task, std::size_t jobs, const CellConfigHook& hook) {
  if (methods.empty() || seeds.empty()) throw InvalidInput("sweep: need at least one method and one seed");

  // Data depends only on the seed, so every method sees the same examples.
  std::map<std::uint64_t, TaskData> data;
  for (auto s : seeds) {
    TaskSpec spec = task;
    spec.seed = s;
    data.emplace(s, make_task(spec));
  }

  SweepResult out;
  for (auto m : methods)
    for (auto s : seeds) out.cells.push_back({m, s, {}});

  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < out.cells.size();) {
      auto& cell = out.cells[k];
      TrainConfig cfg = base;
      cfg.method = cell.method;
      if (hook) hook(cell.method, cell.seed, cfg);
      try {
        cell.result = train(cfg, mc, data.at(cell.seed), cell.seed);
      } catch (const std::exception& e) {
        cell.result.abort = AbortInfo{cell.method, 0, std::nullopt, e.what()};
      }
      std::lock_guard lock(log_mutex);
      if (cell.result.abort) {
        spdlog::warn("cell {} seed {} aborted: {}", method_name(cell.method), cell.seed, cell.result.abort->reason);
      } else if (!cell.result.records.empty()) {
        spdlog::info("cell {} seed {} done, val loss {:.6f}", method_name(cell.method), cell.seed,
                     cell.result.records.back().val_loss);
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, out.cells.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (auto m : methods) {
    SweepAverage avg;
    avg.method = m;
    for (const auto& cell : out.cells) {
      if (cell.method != m) continue;
      ++avg.runs;
      if (!cell.ok()) continue;
      ++avg.ok_runs;
      const auto& last = cell.result.records.back();
      avg.train_loss += last.train_loss;
      avg.val_loss += last.val_loss;
      avg.grad_norm += last.grad_norm;
      avg.param_count += double(last.param_count);
    }
    if (avg.ok_runs) {
      const double n = double(avg.ok_runs);
      avg.train_loss /= n;
      avg.val_loss /= n;
      avg.grad_norm /= n;
      avg.param_count /= n;
    }
    out.averages.push_back(avg);
  }
  return out;
}

}  // namespace peft
