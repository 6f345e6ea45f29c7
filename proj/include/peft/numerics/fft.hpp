#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "peft/numerics/matrix.hpp"

namespace peft {

/// Scalar-operation tally for the structured transforms. Each real
/// multiply, add, or transcendental evaluation counts as one.
struct OpCounter {
  std::uint64_t ops = 0;
  void add(std::uint64_t n) { ops += n; }
};

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }
std::size_t log2_exact(std::size_t n);

/// Unitary DFT, X_k = n^{-1/2} Σ_j x_j e^{-2πi jk/n}. Length must be a power of two.
CVector fft_apply(std::span<const Complex> x, OpCounter* counter = nullptr);
/// Inverse of fft_apply (also unitary).
CVector ifft_apply(std::span<const Complex> x, OpCounter* counter = nullptr);

/// (I − 2vvᴴ/‖v‖²)x without forming the reflector.
CVector householder_apply(std::span<const Complex> v, std::span<const Complex> x,
                          OpCounter* counter = nullptr);

/// Bit-reversal permutation of {0..n-1}; n a power of two.
std::vector<std::size_t> bit_reversal_permutation(std::size_t n);

}  // namespace peft
