#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "peft/numerics/matrix.hpp"

namespace peft {

/// Thin singular value decomposition g ≈ u · diag(s) · vᴴ.
///
/// u is rows×r and v is cols×r, both with orthonormal columns; s is sorted
/// non-increasing. When fewer than r singular values are nonzero the extra
/// columns of u and v are completed to an orthonormal set.
template <typename T>
struct BasicSvd {
  BasicMatrix<T> u;
  std::vector<double> s;
  BasicMatrix<T> v;
};
using SvdResult = BasicSvd<double>;
using CSvdResult = BasicSvd<Complex>;

/// Full thin SVD (r = min(rows, cols)) by one-sided Jacobi rotations.
/// Throws NumericalFailure if the sweep cap is reached without convergence.
SvdResult svd(const Matrix& g);
CSvdResult svd(const CMatrix& g);

/// Top-r singular triples of g. Requires 1 ≤ r ≤ min(rows, cols).
SvdResult truncated_svd(const Matrix& g, std::size_t r);

/// u · diag(s) · vᴴ.
template <typename T>
BasicMatrix<T> reconstruct(const BasicSvd<T>& f) {
  return matmul(scale_columns(f.u, f.s), f.v.adjoint());
}

/// Nearest orthogonal (unitary) matrix in Frobenius norm, u·vᴴ from the SVD.
/// Throws NumericalFailure when the smallest singular value is below 1e-12.
Matrix polar_project(const Matrix& m);
CMatrix polar_project(const CMatrix& m);

/// exp(b) by scaling and squaring around a degree-12 Taylor core.
CMatrix matrix_exp(const CMatrix& b);
Matrix matrix_exp(const Matrix& b);

/// LU factorization with partial pivoting of a square matrix.
struct LuFactors {
  Matrix lu;
  std::vector<std::size_t> perm;
  double min_pivot = 0.0;
};

/// Throws NumericalFailure (naming the smallest pivot) when |pivot| < tol.
LuFactors lu_factor(const Matrix& a, double tol = 1e-13);
/// Solves a · x = b for every column of b.
Matrix lu_solve(const LuFactors& f, const Matrix& b);
Matrix inverse(const Matrix& a);

/// Central-difference gradient of f at p.
using ScalarField = std::function<double(std::span<const double>)>;
Vector finite_diff_grad(const ScalarField& f, std::span<const double> p, double eps = 1e-5);

}  // namespace peft
