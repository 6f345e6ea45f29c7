#pragma once

#include <stdexcept>
#include <string>

namespace peft {

/// Raised when a caller hands an operation arguments outside its contract
/// (shape mismatch, rank out of range, non-power-of-two length, ...).
class InvalidInput : public std::invalid_argument {
 public:
  explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised when a numerical routine cannot produce a trustworthy result
/// (singular matrix, non-convergence, non-finite values).
class NumericalFailure : public std::runtime_error {
 public:
  explicit NumericalFailure(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace peft
