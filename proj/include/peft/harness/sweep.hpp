#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "peft/harness/train.hpp"

namespace peft {

struct SweepCell {
  Method method = Method::hybrid;
  std::uint64_t seed = 0;
  TrainResult result;

  bool ok() const { return !result.abort && !result.records.empty(); }
};

/// Mean of the final-epoch values over a method's successful runs.
struct SweepAverage {
  Method method = Method::hybrid;
  std::size_t runs = 0;
  std::size_t ok_runs = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double grad_norm = 0.0;
  double param_count = 0.0;
};

struct SweepResult {
  std::vector<SweepCell> cells;  // method-major, seeds in the given order
  std::vector<SweepAverage> averages;
};

/// Optional per-cell hook applied to the train config (fault injection).
using CellConfigHook = std::function<void(Method, std::uint64_t, TrainConfig&)>;

/// Runs every method × seed cell on the data of each seed. Cells run on up
/// to `jobs` threads; results are ordered independently of scheduling.
/// A failing cell is recorded as aborted and the rest still run.
SweepResult sweep(const std::vector<Method>& methods, const std::vector<std::uint64_t>& seeds, const TrainConfig& base,
                  const ModelConfig& mc, const TaskSpec& task, std::size_t jobs = 1, const CellConfigHook& hook = {});

}  // namespace peft
