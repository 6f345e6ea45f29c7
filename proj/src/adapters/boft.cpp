#include "peft/adapters/boft.hpp"

#include <cmath>

#include "peft/numerics/linalg.hpp"

namespace peft {

SkewMatrix SkewMatrix::from_upper(const Matrix& m) {
  if (!m.is_square()) throw InvalidInput("SkewMatrix: source must be square");
  SkewMatrix s(m.rows());
  for (std::size_t i = 0; i < s.n_; ++i)
    for (std::size_t j = i + 1; j < s.n_; ++j) s.upper_[s.index(i, j)] = m(i, j);
  return s;
}

std::size_t SkewMatrix::index(std::size_t i, std::size_t j) const {
  // Row-major strictly upper triangle: row i starts after Σ_{k<i} (n-1-k) entries.
  return i * (2 * n_ - i - 1) / 2 + (j - i - 1);
}

double SkewMatrix::operator()(std::size_t i, std::size_t j) const {
  if (i == j) return 0.0;
  return i < j ? upper_[index(i, j)] : -upper_[index(j, i)];
}

Matrix SkewMatrix::dense() const {
  Matrix m(n_, n_);
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = i + 1; j < n_; ++j) {
      const double v = upper_[index(i, j)];
      m(i, j) = v;
      m(j, i) = -v;
    }
  return m;
}

BoftState BoftState::butterfly_identity(std::size_t dim, std::size_t m, double eta) {
  const std::size_t depth = log2_exact(dim);
  if (m == 0 || m > depth) {
    throw InvalidInput("butterfly: level count " + std::to_string(m) + " outside [1, log2(" +
                       std::to_string(dim) + ")]");
  }
  BoftState st;
  st.form = BoftForm::butterfly;
  st.dim = dim;
  st.eta = eta;
  for (std::size_t i = 0; i < m; ++i) st.levels.push_back({i, Vector(dim / 2, 0.0)});
  return st;
}

BoftState BoftState::cayley_identity(std::size_t dim, double eta) {
  BoftState st;
  st.form = BoftForm::cayley;
  st.dim = dim;
  st.eta = eta;
  st.q = SkewMatrix(dim);
  st.r_cache = Matrix::identity(dim);
  return st;
}

std::size_t BoftState::parameter_count() const {
  if (form == BoftForm::cayley) return q.parameter_count();
  std::size_t n = 0;
  for (const auto& l : levels) n += l.angles.size();
  return n;
}

std::vector<std::pair<std::size_t, std::size_t>> butterfly_pairs(std::size_t dim, std::size_t level) {
  const std::size_t stride = std::size_t{1} << level;
  if (stride >= dim) throw InvalidInput("butterfly: level stride exceeds dimension");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(dim / 2);
  for (std::size_t j = 0; j < dim; ++j)
    if ((j & stride) == 0) pairs.emplace_back(j, j + stride);
  return pairs;
}

namespace {

void require_butterfly(const BoftState& st) {
  if (st.form != BoftForm::butterfly) throw InvalidInput("butterfly operation on a Cayley-form state");
  log2_exact(st.dim);
  for (const auto& l : st.levels)
    if (l.angles.size() != st.dim / 2) throw InvalidInput("butterfly: level has wrong angle count");
}

// Applies one level in place to the rows of m (row-pair rotations).
void rotate_rows(Matrix& m, const ButterflyLevel& level, std::size_t dim) {
  const auto pairs = butterfly_pairs(dim, level.level_index);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const double c = std::cos(level.angles[p]);
    const double s = std::sin(level.angles[p]);
    auto ra = m.row(pairs[p].first);
    auto rb = m.row(pairs[p].second);
    for (std::size_t k = 0; k < m.cols(); ++k) {
      const double xa = ra[k], xb = rb[k];
      ra[k] = c * xa - s * xb;
      rb[k] = s * xa + c * xb;
    }
  }
}

}  // namespace

Matrix butterfly_level_matrix(std::size_t dim, const ButterflyLevel& level) {
  auto m = Matrix::identity(dim);
  rotate_rows(m, level, dim);
  return m;
}

Matrix butterfly_compose(const BoftState& st) {
  require_butterfly(st);
  auto w = Matrix::identity(st.dim);
  for (const auto& level : st.levels) rotate_rows(w, level, st.dim);
  return w;
}

Vector butterfly_matvec(const BoftState& st, std::span<const double> x, OpCounter* counter) {
  require_butterfly(st);
  if (x.size() != st.dim) throw InvalidInput("butterfly_matvec: dimension mismatch");
  Vector y(x.begin(), x.end());
  for (const auto& level : st.levels) {
    const auto pairs = butterfly_pairs(st.dim, level.level_index);
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const double c = std::cos(level.angles[p]);
      const double s = std::sin(level.angles[p]);
      const double xa = y[pairs[p].first], xb = y[pairs[p].second];
      y[pairs[p].first] = c * xa - s * xb;
      y[pairs[p].second] = s * xa + c * xb;
    }
    // per rotation: cos, sin, four multiplies, two adds
    if (counter) counter->add(8 * pairs.size());
  }
  return y;
}

std::vector<Vector> butterfly_backward(const BoftState& st, const Matrix& w0, const Matrix& grad_w_eff) {
  require_butterfly(st);
  if (w0.rows() != st.dim || !grad_w_eff.same_shape(w0)) {
    throw InvalidInput("butterfly_backward: shape mismatch");
  }
  // Forward activations Y_{k+1} = L_k Y_k, kept for the reverse sweep.
  std::vector<Matrix> ys{w0};
  for (const auto& level : st.levels) {
    Matrix next = ys.back();
    rotate_rows(next, level, st.dim);
    ys.push_back(std::move(next));
  }
  std::vector<Vector> grads(st.levels.size());
  Matrix g = grad_w_eff;
  for (std::size_t k = st.levels.size(); k-- > 0;) {
    const auto& level = st.levels[k];
    const Matrix& out = ys[k + 1];
    const auto pairs = butterfly_pairs(st.dim, level.level_index);
    grads[k].assign(pairs.size(), 0.0);
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const auto [a, b] = pairs[p];
      // d(out_a)/dθ = -out_b, d(out_b)/dθ = out_a
      double acc = 0.0;
      for (std::size_t c = 0; c < out.cols(); ++c) acc += -g(a, c) * out(b, c) + g(b, c) * out(a, c);
      grads[k][p] = acc;
      // g ← L_kᵀ g on the (a, b) row pair
      const double cs = std::cos(level.angles[p]);
      const double sn = std::sin(level.angles[p]);
      for (std::size_t c = 0; c < g.cols(); ++c) {
        const double ga = g(a, c), gb = g(b, c);
        g(a, c) = cs * ga + sn * gb;
        g(b, c) = -sn * ga + cs * gb;
      }
    }
  }
  return grads;
}

BoftState butterfly_step_project(const BoftState& st, const std::vector<Vector>& grads, double eta) {
  require_butterfly(st);
  if (grads.size() != st.levels.size()) throw InvalidInput("butterfly_step_project: level count mismatch");
  BoftState next = st;
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (grads[k].size() != next.levels[k].angles.size()) {
      throw InvalidInput("butterfly_step_project: angle count mismatch");
    }
    for (std::size_t p = 0; p < grads[k].size(); ++p) {
      if (!std::isfinite(grads[k][p])) throw NumericalFailure("butterfly_step_project: non-finite gradient");
      next.levels[k].angles[p] -= eta * grads[k][p];
    }
  }
  for (const auto& level : next.levels) {
    const auto dense = butterfly_level_matrix(next.dim, level);
    const double moved = max_abs_diff(polar_project(dense), dense);
    if (moved > 1e-10) {
      throw NumericalFailure("butterfly_step_project: level " + std::to_string(level.level_index) +
                             " left the orthogonal group");
    }
  }
  return next;
}

Matrix butterfly_repair_level(const Matrix& level) { return polar_project(level); }

namespace {

struct CayleyParts {
  Matrix r;
  Matrix m;  // (I − ηQ)^{-1}
};

CayleyParts cayley_parts(const Matrix& q, double eta) {
  if (!q.is_square()) throw InvalidInput("cayley_orthonormal: Q must be square");
  const std::size_t n = q.rows();
  auto plus = Matrix::identity(n);
  auto minus = Matrix::identity(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      plus(i, j) += eta * q(i, j);
      minus(i, j) -= eta * q(i, j);
    }
  auto m = lu_solve(lu_factor(minus), Matrix::identity(n));
  return {matmul(plus, m), std::move(m)};
}

}  // namespace

Matrix cayley_orthonormal(const Matrix& q, double eta) {
  for (std::size_t i = 0; i < q.rows() && q.is_square(); ++i)
    for (std::size_t j = 0; j <= i; ++j)
      if (std::abs(q(i, j) + q(j, i)) > 1e-12 * (1.0 + std::abs(q(i, j)))) {
        throw InvalidInput("cayley_orthonormal: Q is not skew-symmetric");
      }
  return cayley_parts(q, eta).r;
}

Matrix cayley_backward(const Matrix& q, double eta, const Matrix& grad_r) {
  const auto parts = cayley_parts(q, eta);
  auto ipr = parts.r;
  for (std::size_t i = 0; i < ipr.rows(); ++i) ipr(i, i) += 1.0;
  // ∇Q = η (I + R)ᵀ ∇R Mᵀ
  auto g = matmul_a_bt(matmul_at_b(ipr, grad_r), parts.m);
  g *= eta;
  return g;
}

Matrix boft_delta(const Matrix& r, const Matrix& w) {
  if (!r.is_square() || r.cols() != w.rows()) throw InvalidInput("boft_delta: dimension mismatch");
  auto rw = matmul(r, w);
  return rw - w;
}

BoftState boft_q_step(const BoftState& st, const Matrix& grad_q, double eta) {
  if (st.form != BoftForm::cayley) throw InvalidInput("boft_q_step: state is not in Cayley form");
  if (grad_q.rows() != st.dim || grad_q.cols() != st.dim) throw InvalidInput("boft_q_step: shape mismatch");
  if (!grad_q.all_finite()) throw NumericalFailure("boft_q_step: non-finite gradient");
  BoftState next = st;
  auto gen = next.q.generator();
  std::size_t k = 0;
  for (std::size_t i = 0; i < st.dim; ++i)
    for (std::size_t j = i + 1; j < st.dim; ++j, ++k) gen[k] -= eta * (grad_q(i, j) - grad_q(j, i));
  next.r_cache = cayley_orthonormal(next.q.dense(), next.eta);
  return next;
}

Matrix boft_weight_delta(const BoftState& st, const Matrix& w0) {
  if (st.form == BoftForm::cayley) return boft_delta(st.r_cache, w0);
  return boft_delta(butterfly_compose(st), w0);
}

}  // namespace peft
