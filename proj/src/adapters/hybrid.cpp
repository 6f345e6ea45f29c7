#include "peft/adapters/hybrid.hpp"

#include <cmath>

namespace peft {

double hybrid_lambda(double g_lora, double g_boft) {
  if (!(g_lora >= 0.0) || !(g_boft >= 0.0)) throw InvalidInput("hybrid_lambda: gradient norms must be nonnegative");
  if (g_lora < 1e-12 && g_boft < 1e-12) return 0.5;
  return g_lora / (g_lora + g_boft);
}

Matrix hybrid_delta(double lambda, const Matrix& d_lora, const Matrix& d_boft) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidInput("hybrid_delta: lambda outside [0, 1]");
  if (!d_lora.same_shape(d_boft)) throw InvalidInput("hybrid_delta: delta shapes differ");
  Matrix out = d_lora;
  out *= lambda;
  Matrix b = d_boft;
  b *= 1.0 - lambda;
  out += b;
  return out;
}

}  // namespace peft
