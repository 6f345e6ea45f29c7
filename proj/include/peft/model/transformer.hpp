#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <variant>
#include <vector>

#include "peft/adapters/boft.hpp"
#include "peft/adapters/hybrid.hpp"
#include "peft/adapters/lora.hpp"
#include "peft/adapters/unitary.hpp"
#include "peft/model/config.hpp"
#include "peft/numerics/matrix.hpp"

namespace peft {

/// Adapter attached to one weight matrix. monostate means no adapter: the
/// matrix is frozen, or trained directly when the model is in full-FT mode.
using AdapterState = std::variant<std::monostate, LoraAdapter, BoftState, HybridState, UnitaryParam>;

struct TargetSlot {
  Matrix w0;
  AdapterState adapter;

  bool has_adapter() const { return !std::holds_alternative<std::monostate>(adapter); }
};

struct LayerWeights {
  std::array<TargetSlot, kAllTargets.size()> slots;

  TargetSlot& slot(Target t) { return slots[static_cast<std::size_t>(t)]; }
  const TargetSlot& slot(Target t) const { return slots[static_cast<std::size_t>(t)]; }
};

/// Encoder weights: token/position embeddings, n_layers blocks of
/// attention + GELU feed-forward with plain residuals, and an untied
/// unembedding. No biases, no normalization.
struct ModelWeights {
  ModelConfig cfg;
  Matrix tok_emb;  // vocab × d_model
  Matrix pos_emb;  // seq_len × d_model
  Matrix unembed;  // vocab × d_model
  std::vector<LayerWeights> layers;
  /// Base matrices and embeddings are trainable (no adapters).
  bool full_ft = false;

  /// Embeddings ~ N(0, 1), linear maps ~ N(0, 1/d_in).
  static ModelWeights random_init(const ModelConfig& cfg, std::mt19937_64& rng);

  /// Sum of every tensor size in the base model (the full-FT trainable count).
  std::size_t base_parameter_count() const;
};

/// W₀ + Δ for additive adapters, the real form of U for unitary slots and
/// W₀ itself for plain slots.
Matrix effective_weight(const LayerWeights& lw, Target t);

/// `size` sequences of length `len`, flattened row-major. targets[k] < 0
/// marks a position that does not contribute to the loss.
struct Batch {
  std::size_t size = 0;
  std::size_t len = 0;
  std::vector<int> tokens;
  std::vector<int> targets;

  std::size_t rows() const { return size * len; }
};

struct LayerCache {
  std::array<Matrix, kAllTargets.size()> w;  // effective weights used
  Matrix x_in, q, k, v;
  std::vector<double> probs;  // [batch][head][T][T]
  Matrix attn;                // concatenated head outputs
  Matrix x_mid;               // after the attention residual
  Matrix h_pre, h_act;        // feed-forward pre/post GELU
};

struct ForwardCache {
  std::size_t batch = 0, len = 0;
  std::vector<int> tokens;
  std::vector<LayerCache> layers;
  Matrix x_out;
};

struct ForwardResult {
  Matrix logits;  // (batch·len) × vocab, row b·len + t
  ForwardCache cache;
};

ForwardResult forward(const ModelWeights& w, const Batch& batch);

/// Mean cross-entropy over positions with targets ≥ 0 (0 if none).
double loss(const Matrix& logits, std::span<const int> targets);

/// ∂loss/∂logits.
Matrix loss_grad(const Matrix& logits, std::span<const int> targets);

/// Gradients of one trainable slot. Hybrid slots report each component as
/// if it were alone (∂L/∂ΔW chained through its own parameterization); the
/// gradient of the mixed loss is λ·lora and (1 − λ)·q.
struct SlotGradient {
  Matrix w_eff;                     // ∂L/∂W_eff
  std::optional<LoraGrads> lora;    // LoRA and hybrid
  std::optional<Matrix> q;          // Cayley BOFT and hybrid, ∂L/∂Q over all entries
  std::vector<Vector> angles;       // butterfly BOFT
  std::optional<CMatrix> u;         // unitary: ∂L/∂Re U + i·∂L/∂Im U
};

struct GradientSet {
  std::vector<std::array<std::optional<SlotGradient>, kAllTargets.size()>> layers;
  std::optional<Matrix> tok_emb, pos_emb, unembed;  // full-FT only
};

/// Analytic backward pass. Only trainable slots get gradients: adapter
/// slots, or every slot plus the embeddings in full-FT mode.
GradientSet backward(const ForwardCache& cache, const ModelWeights& w, const Matrix& grad_logits);

/// Convenience: forward, loss and backward for one batch.
struct LossAndGrad {
  double loss = 0.0;
  GradientSet grads;
};
LossAndGrad loss_and_grad(const ModelWeights& w, const Batch& batch);

/// Number of trainable parameters under the current attachment.
std::size_t trainable_parameter_count(const ModelWeights& w);

}  // namespace peft
