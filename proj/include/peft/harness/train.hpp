#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "peft/harness/task.hpp"
#include "peft/model/transformer.hpp"

namespace peft {

enum class Method { full, lora, boft, lora_ga, urnn, hybrid };

inline constexpr std::array<Method, 6> kAllMethods{Method::full,    Method::lora, Method::boft,
                                                   Method::lora_ga, Method::urnn, Method::hybrid};

std::string_view method_name(Method m);
std::optional<Method> parse_method(std::string_view name);

/// Zeroes one adapter component's gradient before it is used anywhere
/// (norms, λ, updates). Used to pin the hybrid to one of its endpoints.
enum class ForceZero { none, lora, boft };

struct TrainConfig {
  Method method = Method::hybrid;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double eta_lora = 0.05;
  double eta_boft = 0.3;
  double eta_full = 0.1;
  double eta_unitary = 0.05;
  std::size_t rank = 16;
  double alpha = 32.0;
  std::size_t m = 3;  // butterfly levels
  BoftForm boft_form = BoftForm::butterfly;
  std::optional<double> clamp_lambda;
  std::size_t renorm_interval = 50;
  std::optional<double> lambda_ema;  // weight on the previous λ
  /// LoRA-GA initial delta is −ga_scale times the rank-r part of ∇W₀.
  double ga_scale = 1.0;
  double lora_init_scale = 0.1;
  ForceZero force_zero_grad = ForceZero::none;
  /// Global step at which a NaN is written into the first trainable tensor
  /// (fault injection for abort handling).
  std::optional<std::size_t> inject_nan_step;
  /// Off by default so reruns produce byte-identical metrics.
  bool record_wall_time = false;

  /// Throws InvalidInput on non-positive rates, rank 0 or too many levels.
  void validate(const ModelConfig& mc) const;

  bool operator==(const TrainConfig&) const = default;
};

struct LayerMetrics {
  std::optional<double> g_lora;
  std::optional<double> g_boft;
  std::optional<double> lambda;
  double grad_norm = 0.0;
};

/// One epoch. Norms and the train loss are means over the epoch's steps;
/// λ is the value in force at the end of the epoch.
struct MetricsRecord {
  std::size_t epoch = 0;
  Method method = Method::hybrid;
  std::vector<LayerMetrics> layers;
  std::optional<double> g_lora;  // whole-model component norms
  std::optional<double> g_boft;
  double grad_norm = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::optional<double> wall_ms;
  std::size_t param_count = 0;
};

struct AbortInfo {
  Method method = Method::hybrid;
  std::size_t epoch = 0;
  std::optional<std::size_t> layer;
  std::string reason;
};

/// Per-step trace, kept for step-wise comparisons between runs.
struct StepTrace {
  double loss = 0.0;
  std::vector<double> lambda;  // per layer, hybrid only
};

struct TrainResult {
  std::vector<MetricsRecord> records;
  std::optional<AbortInfo> abort;
  std::vector<StepTrace> steps;
  ModelWeights weights;
  double initial_val_loss = 0.0;
};

/// Base weights for a seed. Every method started from the same seed sees
/// the same base model.
ModelWeights base_model(const ModelConfig& mc, std::uint64_t seed);

/// Attaches the method's adapters to `w` (no gradient-dependent init).
void attach_method(ModelWeights& w, const TrainConfig& cfg, std::mt19937_64& rng);

/// Trainable-parameter count from closed forms, without building a model.
std::size_t closed_form_parameter_count(const ModelConfig& mc, const TrainConfig& cfg);

/// Trains one method from the seed's base model on `data`.
TrainResult train(const TrainConfig& cfg, const ModelConfig& mc, const TaskData& data, std::uint64_t seed);

}  // namespace peft
