#include "peft/numerics/fft.hpp"

#include <cmath>
#include <numbers>

namespace peft {

std::size_t log2_exact(std::size_t n) {
  if (!is_power_of_two(n)) throw InvalidInput("length " + std::to_string(n) + " is not a power of two");
  std::size_t k = 0;
  while ((std::size_t{1} << k) < n) ++k;
  return k;
}

std::vector<std::size_t> bit_reversal_permutation(std::size_t n) {
  const std::size_t bits = log2_exact(n);
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = 0;
    for (std::size_t b = 0; b < bits; ++b)
      if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
    perm[i] = r;
  }
  return perm;
}

namespace {

// Iterative radix-2 Cooley-Tukey; sign = -1 forward, +1 inverse.
CVector radix2(std::span<const Complex> x, double sign, OpCounter* counter) {
  const std::size_t n = x.size();
  const std::size_t bits = log2_exact(n);
  const auto rev = bit_reversal_permutation(n);
  CVector y(n);
  for (std::size_t i = 0; i < n; ++i) y[rev[i]] = x[i];

  for (std::size_t s = 1; s <= bits; ++s) {
    const std::size_t len = std::size_t{1} << s;
    const std::size_t half = len / 2;
    const double ang = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t k = 0; k < half; ++k) {
      const Complex w = std::polar(1.0, ang * static_cast<double>(k));
      for (std::size_t start = 0; start < n; start += len) {
        const Complex t = w * y[start + k + half];
        const Complex u = y[start + k];
        y[start + k] = u + t;
        y[start + k + half] = u - t;
      }
    }
    // half twiddles (2 transcendental each) and n/2 butterflies of
    // one complex multiply (6) and two complex adds (4).
    if (counter) counter->add(2 * half + 10 * (n / 2));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (auto& v : y) v *= scale;
  if (counter) counter->add(2 * n);
  return y;
}

}  // namespace

CVector fft_apply(std::span<const Complex> x, OpCounter* counter) { return radix2(x, -1.0, counter); }

CVector ifft_apply(std::span<const Complex> x, OpCounter* counter) { return radix2(x, +1.0, counter); }

CVector householder_apply(std::span<const Complex> v, std::span<const Complex> x,
                          OpCounter* counter) {
  if (v.size() != x.size()) throw InvalidInput("householder_apply: dimension mismatch");
  double vv = 0.0;
  Complex vx{};
  for (std::size_t i = 0; i < v.size(); ++i) {
    vv += std::norm(v[i]);
    vx += std::conj(v[i]) * x[i];
  }
  if (vv == 0.0) throw InvalidInput("householder_apply: zero reflector");
  const Complex coef = 2.0 * vx / vv;
  CVector y(x.begin(), x.end());
  for (std::size_t i = 0; i < v.size(); ++i) y[i] -= coef * v[i];
  // norm (3n), inner product (8n), scaled subtraction (8n), coefficient (4)
  if (counter) counter->add(19 * v.size() + 4);
  return y;
}

}  // namespace peft
