#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "peft/model/transformer.hpp"

namespace peft {

/// Binary weight snapshot.
///
/// Layout (all integers little-endian):
///   "PFRG", u32 version, u32 n_layers, d_model, n_heads, d_ff, vocab,
///   seq_len, target bitmask, full_ft flag, u32 tensor count, then per tensor
///   u32 name length, name bytes, u32 ndims, u64 dims..., f64 values.
/// Adapter state is stored as named tensors next to each base matrix
/// (e.g. "layers.0.attn_q.lora_a"), so the attachment is recovered on load.
inline constexpr std::uint32_t kSnapshotVersion = 1;

std::vector<std::uint8_t> encode_snapshot(const ModelWeights& w);
ModelWeights decode_snapshot(const std::vector<std::uint8_t>& bytes);

/// Atomic write (temporary file + rename).
void save_snapshot(const ModelWeights& w, const std::filesystem::path& path);
ModelWeights load_snapshot(const std::filesystem::path& path);

}  // namespace peft
