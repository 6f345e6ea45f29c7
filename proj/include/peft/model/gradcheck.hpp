#pragma once

#include <string>
#include <vector>

#include "peft/model/transformer.hpp"

namespace peft {

struct ParamClassCheck {
  std::string name;  // e.g. "layers.0.attn_q.lora_a"
  std::size_t count = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<ParamClassCheck> classes;
  double max_rel_error() const;
};

/// Compares the analytic gradient of every trainable parameter against
/// central differences of the batch loss. Relative errors use
/// max(|analytic|, |numeric|, floor) as denominator. Hybrid components are
/// compared after weighting by λ and 1 − λ. Unitary slots are checked
/// through their structured parameters, so their `u` must equal
/// unitary_compose of them.
GradCheckReport gradient_check(const ModelWeights& w, const Batch& batch, double eps = 1e-5, double floor = 1e-6);

}  // namespace peft
