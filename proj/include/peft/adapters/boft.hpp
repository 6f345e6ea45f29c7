#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "peft/numerics/fft.hpp"
#include "peft/numerics/matrix.hpp"

namespace peft {

/// Skew-symmetric matrix stored as its strictly upper triangle. Reading the
/// dense form mirrors with a sign flip, so Q + Qᵀ = 0 holds exactly.
class SkewMatrix {
 public:
  SkewMatrix() = default;
  explicit SkewMatrix(std::size_t n) : n_(n), upper_(n * (n - (n > 0 ? 1 : 0)) / 2, 0.0) {}

  /// Keeps the strictly upper triangle of m, ignoring everything else.
  static SkewMatrix from_upper(const Matrix& m);

  std::size_t dim() const { return n_; }
  std::size_t parameter_count() const { return upper_.size(); }
  std::span<double> generator() { return upper_; }
  std::span<const double> generator() const { return upper_; }

  double operator()(std::size_t i, std::size_t j) const;
  Matrix dense() const;

 private:
  std::size_t index(std::size_t i, std::size_t j) const;  // requires i < j

  std::size_t n_ = 0;
  std::vector<double> upper_;
};

/// One butterfly stage: index j is paired with j + 2^level_index (bit
/// level_index of j clear) and each pair gets a Givens rotation by its angle.
struct ButterflyLevel {
  std::size_t level_index = 0;
  Vector angles;
};

enum class BoftForm { butterfly, cayley };

/// Orthogonal fine-tuning state. The butterfly form keeps a stack of levels
/// acting as W ↦ (L_{m-1}⋯L_0)·W; the Cayley form keeps a skew generator Q
/// and its cached rotation R = (I + ηQ)(I − ηQ)^{-1}.
struct BoftState {
  BoftForm form = BoftForm::cayley;
  std::size_t dim = 0;
  std::vector<ButterflyLevel> levels;
  SkewMatrix q;
  Matrix r_cache;
  double eta = 1e-3;

  static BoftState butterfly_identity(std::size_t dim, std::size_t m, double eta);
  static BoftState cayley_identity(std::size_t dim, double eta);

  std::size_t parameter_count() const;
};

/// Index pairs (j, j + 2^level) for one butterfly stage.
std::vector<std::pair<std::size_t, std::size_t>> butterfly_pairs(std::size_t dim, std::size_t level);

/// Dense matrix of a single level.
Matrix butterfly_level_matrix(std::size_t dim, const ButterflyLevel& level);

Matrix butterfly_compose(const BoftState& st);
Vector butterfly_matvec(const BoftState& st, std::span<const double> x, OpCounter* counter = nullptr);

/// Angle gradients for W_eff = compose(st) · w0 given ∂L/∂W_eff.
std::vector<Vector> butterfly_backward(const BoftState& st, const Matrix& w0, const Matrix& grad_w_eff);

/// Gradient step on the angles, then a polar projection of every
/// materialized level which must leave it unchanged (within 1e-10).
BoftState butterfly_step_project(const BoftState& st, const std::vector<Vector>& grads, double eta);

/// Polar repair of a dense level that has drifted off the orthogonal group.
Matrix butterfly_repair_level(const Matrix& level);

/// R = (I + ηQ)(I − ηQ)^{-1}. Throws NumericalFailure (with the smallest
/// pivot) when I − ηQ is singular.
Matrix cayley_orthonormal(const Matrix& q, double eta);

/// ∂L/∂Q (treating every entry of Q as free) from ∂L/∂R for the Cayley map.
Matrix cayley_backward(const Matrix& q, double eta, const Matrix& grad_r);

/// (R − I)·W.
Matrix boft_delta(const Matrix& r, const Matrix& w);

/// G = ∇Q − ∇Qᵀ, Q ← Q − η·G, then R is recomputed.
BoftState boft_q_step(const BoftState& st, const Matrix& grad_q, double eta);

/// Effective-weight delta for either form: (R − I)·W₀ or (Π L_i − I)·W₀.
Matrix boft_weight_delta(const BoftState& st, const Matrix& w0);

}  // namespace peft
