#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "peft/cli/config.hpp"
#include "peft/harness/sweep.hpp"
#include "peft/harness/train.hpp"

namespace peft {

inline constexpr std::string_view kMetricsHeader =
    "epoch,method,layer,g_lora,g_boft,lambda,grad_norm,train_loss,val_loss,wall_ms,param_count";
inline constexpr std::string_view kSweepHeader = "row,method,seed,status,train_loss,val_loss,grad_norm,param_count";

/// Per epoch: one row per layer (epoch-level columns empty), then a
/// layer="all" row. Inapplicable fields are empty; reals use 17 digits.
std::string metrics_csv(const std::vector<MetricsRecord>& records);

/// One `run` row per cell (method-major), then one `avg` row per method.
std::string sweep_csv(const SweepResult& result);

/// Config echo, status, final metrics and abort diagnostics.
std::string run_summary_json(const RunConfig& cfg, std::uint64_t seed, const TrainResult& result);

}  // namespace peft
