#include "peft/numerics/linalg.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <numeric>
#include <sstream>

namespace peft {

CMatrix to_complex(const Matrix& m) {
  CMatrix c(m.rows(), m.cols());
  for (std::size_t k = 0; k < m.size(); ++k) c.data()[k] = m.data()[k];
  return c;
}

Matrix real_part(const CMatrix& m) {
  Matrix r(m.rows(), m.cols());
  for (std::size_t k = 0; k < m.size(); ++k) r.data()[k] = m.data()[k].real();
  return r;
}

Matrix imag_part(const CMatrix& m) {
  Matrix r(m.rows(), m.cols());
  for (std::size_t k = 0; k < m.size(); ++k) r.data()[k] = m.data()[k].imag();
  return r;
}

namespace {

constexpr int kMaxSweeps = 80;
constexpr double kJacobiTol = 1e-15;

template <typename T>
T phase_of(const T& gamma, double mag) {
  return gamma / mag;
}

// Fills the columns flagged in `missing` with unit vectors orthogonal to every
// other column of q (classical Gram-Schmidt against the standard basis, twice).
template <typename T>
void complete_orthonormal(std::vector<std::vector<T>>& q, const std::vector<bool>& missing) {
  const std::size_t m = q.empty() ? 0 : q.front().size();
  std::size_t next_basis = 0;
  for (std::size_t j = 0; j < q.size(); ++j) {
    if (!missing[j]) continue;
    bool placed = false;
    while (!placed && next_basis < m) {
      std::vector<T> cand(m, T{});
      cand[next_basis++] = T{1};
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t k = 0; k < q.size(); ++k) {
          if (k == j || (missing[k] && k > j)) continue;
          T dot{};
          for (std::size_t i = 0; i < m; ++i) dot += conj_of(q[k][i]) * cand[i];
          for (std::size_t i = 0; i < m; ++i) cand[i] -= dot * q[k][i];
        }
      }
      double nrm = norm2(std::span<const T>(cand));
      if (nrm > 0.5) {
        for (auto& x : cand) x /= nrm;
        q[j] = std::move(cand);
        placed = true;
      }
    }
    if (!placed) throw NumericalFailure("svd: could not complete orthonormal basis");
  }
}

// One-sided Jacobi on a matrix with rows >= cols.
template <typename T>
BasicSvd<T> jacobi_tall(const BasicMatrix<T>& g) {
  const std::size_t m = g.rows();
  const std::size_t n = g.cols();
  std::vector<std::vector<T>> a(n, std::vector<T>(m));
  std::vector<std::vector<T>> v(n, std::vector<T>(n, T{}));
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) a[j][i] = g(i, j);
    v[j][j] = T{1};
  }

  bool converged = false;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0;
        T gamma{};
        for (std::size_t i = 0; i < m; ++i) {
          alpha += abs2(a[p][i]);
          beta += abs2(a[q][i]);
          gamma += conj_of(a[p][i]) * a[q][i];
        }
        const double mag = std::abs(gamma);
        if (mag == 0.0 || mag <= kJacobiTol * std::sqrt(alpha * beta)) continue;
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * mag);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        const T ph = phase_of(gamma, mag);
        const T ph_conj = conj_of(ph);
        auto rotate = [&](std::vector<T>& xp, std::vector<T>& xq) {
          for (std::size_t i = 0; i < xp.size(); ++i) {
            const T xpi = xp[i];
            const T xqi = xq[i];
            xp[i] = c * xpi - s * ph_conj * xqi;
            xq[i] = s * ph * xpi + c * xqi;
          }
        };
        rotate(a[p], a[q]);
        rotate(v[p], v[q]);
      }
    }
  }
  if (!converged) throw NumericalFailure("svd: one-sided Jacobi did not converge");

  std::vector<double> sv(n);
  for (std::size_t j = 0; j < n; ++j) sv[j] = norm2(std::span<const T>(a[j]));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return sv[x] > sv[y]; });

  std::vector<std::vector<T>> ucols(n);
  std::vector<bool> missing(n, false);
  BasicSvd<T> out;
  out.s.resize(n);
  out.v = BasicMatrix<T>(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    out.s[k] = sv[j];
    ucols[k] = a[j];
    if (sv[j] < 1e-300) {
      missing[k] = true;
      out.s[k] = 0.0;
    } else {
      for (auto& x : ucols[k]) x /= sv[j];
    }
    for (std::size_t i = 0; i < n; ++i) out.v(i, k) = v[j][i];
  }
  if (std::find(missing.begin(), missing.end(), true) != missing.end()) {
    complete_orthonormal(ucols, missing);
  }
  out.u = BasicMatrix<T>(m, n);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < m; ++i) out.u(i, k) = ucols[k][i];
  return out;
}

template <typename T>
BasicSvd<T> svd_impl(const BasicMatrix<T>& g) {
  if (g.rows() == 0 || g.cols() == 0) throw InvalidInput("svd: empty matrix");
  if (!g.all_finite()) throw NumericalFailure("svd: non-finite input");
  if (g.rows() >= g.cols()) return jacobi_tall(g);
  auto t = jacobi_tall(g.adjoint());
  return BasicSvd<T>{std::move(t.v), std::move(t.s), std::move(t.u)};
}

template <typename T>
BasicMatrix<T> polar_impl(const BasicMatrix<T>& m) {
  if (!m.is_square()) throw InvalidInput("polar_project: matrix must be square");
  auto f = svd_impl(m);
  if (f.s.back() < 1e-12) {
    std::ostringstream msg;
    msg << "polar_project: singular input (smallest singular value " << f.s.back() << ")";
    throw NumericalFailure(msg.str());
  }
  return matmul(f.u, f.v.adjoint());
}

template <typename T>
BasicMatrix<T> exp_impl(const BasicMatrix<T>& b) {
  if (!b.is_square()) throw InvalidInput("matrix_exp: matrix must be square");
  const std::size_t n = b.rows();
  const double nrm = frobenius_norm(b);
  int squarings = 0;
  if (nrm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(nrm / 0.5)));
  BasicMatrix<T> x = b;
  x *= T{std::ldexp(1.0, -squarings)};

  // Horner form of the order-12 Taylor polynomial: I + X(I + X/2(I + ... (I + X/12))).
  constexpr int kOrder = 12;
  auto e = BasicMatrix<T>::identity(n);
  for (int k = kOrder; k >= 1; --k) {
    e = matmul(x, e);
    e *= T{1.0 / k};
    for (std::size_t i = 0; i < n; ++i) e(i, i) += T{1};
  }
  for (int s = 0; s < squarings; ++s) e = matmul(e, e);
  return e;
}

}  // namespace

SvdResult svd(const Matrix& g) { return svd_impl(g); }
CSvdResult svd(const CMatrix& g) { return svd_impl(g); }

SvdResult truncated_svd(const Matrix& g, std::size_t r) {
  const std::size_t full = std::min(g.rows(), g.cols());
  if (r < 1 || r > full) {
    throw InvalidInput("truncated_svd: rank " + std::to_string(r) + " outside [1, " +
                       std::to_string(full) + "]");
  }
  auto f = svd_impl(g);
  if (r == full) return f;
  SvdResult t;
  t.s.assign(f.s.begin(), f.s.begin() + static_cast<std::ptrdiff_t>(r));
  t.u = Matrix(g.rows(), r);
  t.v = Matrix(g.cols(), r);
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t k = 0; k < r; ++k) t.u(i, k) = f.u(i, k);
  for (std::size_t i = 0; i < g.cols(); ++i)
    for (std::size_t k = 0; k < r; ++k) t.v(i, k) = f.v(i, k);
  return t;
}

Matrix polar_project(const Matrix& m) { return polar_impl(m); }
CMatrix polar_project(const CMatrix& m) { return polar_impl(m); }

CMatrix matrix_exp(const CMatrix& b) { return exp_impl(b); }
Matrix matrix_exp(const Matrix& b) { return exp_impl(b); }

LuFactors lu_factor(const Matrix& a, double tol) {
  if (!a.is_square()) throw InvalidInput("lu_factor: matrix must be square");
  const std::size_t n = a.rows();
  LuFactors f{a, std::vector<std::size_t>(n), std::numeric_limits<double>::infinity()};
  std::iota(f.perm.begin(), f.perm.end(), 0);
  Matrix& lu = f.lu;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(lu(i, k)) > std::abs(lu(piv, k))) piv = i;
    f.min_pivot = std::min(f.min_pivot, std::abs(lu(piv, k)));
    if (std::abs(lu(piv, k)) < tol) {
      std::ostringstream msg;
      msg << "lu_factor: singular matrix (pivot " << std::abs(lu(piv, k)) << " at column " << k
          << ")";
      throw NumericalFailure(msg.str());
    }
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu(k, j), lu(piv, j));
      std::swap(f.perm[k], f.perm[piv]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double l = lu(i, k) / lu(k, k);
      lu(i, k) = l;
      if (l == 0.0) continue;
      for (std::size_t j = k + 1; j < n; ++j) lu(i, j) -= l * lu(k, j);
    }
  }
  return f;
}

Matrix lu_solve(const LuFactors& f, const Matrix& b) {
  const std::size_t n = f.lu.rows();
  if (b.rows() != n) throw InvalidInput("lu_solve: right-hand side has wrong row count");
  Matrix x(n, b.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) x(i, j) = b(f.perm[i], j);
  for (std::size_t c = 0; c < b.cols(); ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = x(i, c);
      for (std::size_t k = 0; k < i; ++k) acc -= f.lu(i, k) * x(k, c);
      x(i, c) = acc;
    }
    for (std::size_t i = n; i-- > 0;) {
      double acc = x(i, c);
      for (std::size_t k = i + 1; k < n; ++k) acc -= f.lu(i, k) * x(k, c);
      x(i, c) = acc / f.lu(i, i);
    }
  }
  return x;
}

Matrix inverse(const Matrix& a) { return lu_solve(lu_factor(a), Matrix::identity(a.rows())); }

Vector finite_diff_grad(const ScalarField& f, std::span<const double> p, double eps) {
  if (!(eps > 0.0)) throw InvalidInput("finite_diff_grad: eps must be positive");
  Vector work(p.begin(), p.end());
  Vector grad(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = work[i];
    work[i] = orig + eps;
    const double fp = f(work);
    work[i] = orig - eps;
    const double fm = f(work);
    work[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericalFailure("finite_diff_grad: non-finite evaluation at component " +
                             std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * eps);
  }
  return grad;
}

}  // namespace peft
