#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>

namespace peft {

/// Weight matrices of one encoder layer that can host an adapter.
enum class Target { attn_q, attn_k, attn_v, attn_o, ff_in, ff_out };

inline constexpr std::array<Target, 6> kAllTargets{Target::attn_q, Target::attn_k, Target::attn_v,
                                                    Target::attn_o, Target::ff_in,  Target::ff_out};

std::string_view target_name(Target t);
std::optional<Target> parse_target(std::string_view name);

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 32;
  std::size_t n_heads = 2;
  std::size_t d_ff = 64;
  std::size_t vocab = 16;
  std::size_t seq_len = 16;
  std::set<Target> adapter_targets{Target::attn_q, Target::attn_v};

  std::size_t head_dim() const { return d_model / n_heads; }

  /// (d_out, d_in) of a target matrix; weights act as y = W·x.
  std::pair<std::size_t, std::size_t> target_shape(Target t) const;

  /// Throws InvalidInput on zero sizes or d_model % n_heads != 0. With
  /// `unitary` set, also requires every target to be square with
  /// d_model / 2 a power of two.
  void validate(bool unitary = false) const;

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace peft
