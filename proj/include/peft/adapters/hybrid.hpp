#pragma once

#include "peft/adapters/boft.hpp"
#include "peft/adapters/lora.hpp"

namespace peft {

/// Per-target state of the gradient-norm-weighted hybrid: a LoRA pair, a
/// Cayley-form BOFT rotation, and the mixing coefficient used by the forward
/// pass. The effective weight is W₀ + λ·ΔW_LoRA + (1 − λ)·ΔW_BOFT.
struct HybridState {
  LoraAdapter lora;
  BoftState boft;
  double lambda_last = 0.5;
  double eta_lora = 1e-2;

  std::size_t parameter_count() const { return lora.parameter_count() + boft.parameter_count(); }
};

/// λ = g_lora / (g_lora + g_boft), or 0.5 when both norms are below 1e-12.
double hybrid_lambda(double g_lora, double g_boft);

/// λ·d_lora + (1 − λ)·d_boft.
Matrix hybrid_delta(double lambda, const Matrix& d_lora, const Matrix& d_boft);

}  // namespace peft
