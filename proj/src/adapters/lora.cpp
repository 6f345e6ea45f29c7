#include "peft/adapters/lora.hpp"

#include <algorithm>
#include <cmath>

#include "peft/numerics/linalg.hpp"

namespace peft {

LoraAdapter LoraAdapter::zero_delta(std::size_t d_out, std::size_t d_in, std::size_t r, double alpha,
                                    std::mt19937_64& rng, double init_scale) {
  std::uniform_real_distribution<double> ud(-init_scale, init_scale);
  LoraAdapter ad{Matrix(d_out, r), Matrix(r, d_in), alpha, std::nullopt};
  for (auto& x : ad.a.data()) x = ud(rng);
  validate(ad);
  return ad;
}

void validate(const LoraAdapter& ad) {
  if (ad.a.cols() != ad.b.rows()) throw InvalidInput("lora: A.cols must equal B.rows");
  if (ad.rank() == 0 || ad.rank() > std::min(ad.d_out(), ad.d_in())) {
    throw InvalidInput("lora: rank " + std::to_string(ad.rank()) + " outside [1, min(d_out, d_in)]");
  }
}

Matrix lora_delta(const LoraAdapter& ad) {
  auto d = matmul(ad.a, ad.b);
  d *= ad.scaling();
  return d;
}

ClampOutcome lora_clamp(const LoraAdapter& ad, const Matrix& w0) {
  if (!ad.clamp_lambda) return {ad, ClampAction::none};
  const double lambda = *ad.clamp_lambda;
  if (!(lambda > 0.0)) throw InvalidInput("lora_clamp: clamp_lambda must be positive");
  const double delta_norm = frobenius_norm(lora_delta(ad));
  const double bound = lambda * frobenius_norm(w0);
  if (delta_norm <= bound) return {ad, ClampAction::none};

  ClampOutcome out{ad, ClampAction::rescaled};
  if (bound == 0.0) {
    out.adapter.a *= 0.0;
    out.adapter.b *= 0.0;
    out.action = ClampAction::zeroed;
    return out;
  }
  const double f = std::sqrt(bound / delta_norm);
  out.adapter.a *= f;
  out.adapter.b *= f;
  return out;
}

double LoraGrads::norm() const {
  const double na = frobenius_norm(a);
  const double nb = frobenius_norm(b);
  return std::sqrt(na * na + nb * nb);
}

LoraGrads lora_backward(const LoraAdapter& ad, const Matrix& grad_delta) {
  if (grad_delta.rows() != ad.d_out() || grad_delta.cols() != ad.d_in()) {
    throw InvalidInput("lora_backward: gradient shape does not match adapter");
  }
  LoraGrads g{matmul_a_bt(grad_delta, ad.b), matmul_at_b(ad.a, grad_delta)};
  g.a *= ad.scaling();
  g.b *= ad.scaling();
  return g;
}

ClampOutcome lora_grad_step(const LoraAdapter& ad, const LoraGrads& grads, double eta, const Matrix& w0) {
  if (!grads.a.same_shape(ad.a) || !grads.b.same_shape(ad.b)) {
    throw InvalidInput("lora_grad_step: gradient shapes do not match factors");
  }
  if (!grads.a.all_finite() || !grads.b.all_finite()) {
    throw NumericalFailure("lora_grad_step: non-finite gradient");
  }
  LoraAdapter next = ad;
  next.a -= eta * grads.a;
  next.b -= eta * grads.b;
  return lora_clamp(next, w0);
}

LoraGaFactors lora_ga_init(const Matrix& grad_w0, std::size_t r) {
  auto f = truncated_svd(grad_w0, r);
  std::vector<double> root(f.s.size());
  std::transform(f.s.begin(), f.s.end(), root.begin(), [](double s) { return std::sqrt(s); });
  return {scale_columns(f.u, root), scale_columns(f.v, root).transpose()};
}

}  // namespace peft
