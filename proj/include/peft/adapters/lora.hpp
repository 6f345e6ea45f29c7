#pragma once

#include <cstddef>
#include <optional>
#include <random>

#include "peft/numerics/matrix.hpp"

namespace peft {

/// Low-rank adapter with ΔW = (alpha / rank) · A · B.
///
/// A is d_out × r and B is r × d_in. When clamp_lambda is set, every step
/// enforces ‖ΔW‖_F ≤ clamp_lambda · ‖W₀‖_F.
struct LoraAdapter {
  Matrix a;
  Matrix b;
  double alpha = 32.0;
  std::optional<double> clamp_lambda;

  std::size_t rank() const { return a.cols(); }
  std::size_t d_out() const { return a.rows(); }
  std::size_t d_in() const { return b.cols(); }
  double scaling() const { return alpha / static_cast<double>(rank()); }
  std::size_t parameter_count() const { return a.size() + b.size(); }

  /// B = 0 and A ~ U(-init_scale, init_scale), so the initial delta is zero.
  static LoraAdapter zero_delta(std::size_t d_out, std::size_t d_in, std::size_t r, double alpha,
                                std::mt19937_64& rng, double init_scale = 0.1);
};

/// Throws InvalidInput unless a.cols == b.rows == rank ≤ min(d_out, d_in).
void validate(const LoraAdapter& ad);

Matrix lora_delta(const LoraAdapter& ad);

enum class ClampAction { none, rescaled, zeroed };

struct ClampOutcome {
  LoraAdapter adapter;
  ClampAction action = ClampAction::none;
};

/// Rescales both factors by √(λ‖W₀‖/‖ΔW‖) when the bound is violated. A zero
/// W₀ with a nonzero delta zeroes both factors (reported as `zeroed`).
ClampOutcome lora_clamp(const LoraAdapter& ad, const Matrix& w0);

struct LoraGrads {
  Matrix a;
  Matrix b;
  double norm() const;
};

/// Chain rule from ∂L/∂ΔW to the factors.
LoraGrads lora_backward(const LoraAdapter& ad, const Matrix& grad_delta);

/// Plain SGD on both factors, followed by lora_clamp against w0 when clamping
/// is enabled.
ClampOutcome lora_grad_step(const LoraAdapter& ad, const LoraGrads& grads, double eta, const Matrix& w0);

struct LoraGaFactors {
  Matrix a0;
  Matrix b0;
};

/// A₀ = U·Σ^{1/2}, B₀ = Σ^{1/2}·Vᵀ from the rank-r truncated SVD, so A₀B₀ is
/// the best rank-r approximation of grad_w0.
LoraGaFactors lora_ga_init(const Matrix& grad_w0, std::size_t r);

}  // namespace peft
