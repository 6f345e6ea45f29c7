#pragma once

#include <string>
#include <vector>

namespace peft {

struct PropertyResult {
  std::string name;
  double residual = 0.0;
  double threshold = 0.0;
  bool passed = false;
};

struct CheckOptions {
  /// Test hook: perturbs every Cayley output by 1e-6 in its (0,0) entry.
  bool fault_cayley = false;
};

/// The invariant suite behind `peft_forge check`: orthogonality and
/// unitarity of every structured map, drift under repeated updates,
/// gradient checks per adapter mode, low-rank optimality and op-count
/// scaling. Deterministic (fixed seeds).
std::vector<PropertyResult> run_property_suite(const CheckOptions& opts = {});

}  // namespace peft
