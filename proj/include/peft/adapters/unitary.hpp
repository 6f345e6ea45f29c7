#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "peft/numerics/fft.hpp"
#include "peft/numerics/matrix.hpp"

namespace peft {

/// Structured unitary U = D₃ R₂ F⁻¹ D₂ Π R₁ F D₁ on Cⁿ.
///
/// D_i = diag(e^{iθ}) are phase layers, R_i Householder reflections, F the
/// unitary DFT and Π a fixed permutation ((Πx)_k = x_{perm[k]}). `u` is the
/// materialized matrix; after manifold updates it is the authoritative value
/// and may leave the structured family.
struct UnitaryParam {
  std::size_t dim = 0;
  Vector d1, d2, d3;
  CVector r1, r2;
  std::vector<std::size_t> perm;
  CMatrix u;

  /// Phases 0, random unit reflectors, bit-reversal permutation.
  static UnitaryParam identity_like(std::size_t n, std::mt19937_64& rng);

  /// 3n phases + 2n complex reflector components (counted as 4n reals).
  std::size_t structured_parameter_count() const { return 7 * dim; }
  /// Real dimension of the unitary group, the degrees of freedom the
  /// exponential-map update moves through.
  std::size_t manifold_parameter_count() const { return dim * dim; }
};

/// Throws InvalidInput on non-power-of-two dims, size mismatches or zero reflectors.
void validate(const UnitaryParam& p);

CVector unitary_matvec(const UnitaryParam& p, std::span<const Complex> x, OpCounter* counter = nullptr);
CMatrix unitary_compose(const UnitaryParam& p);

/// Gradients of a real loss with respect to the structured parameters, given
/// ∇U = ∂L/∂Re U + i·∂L/∂Im U. Reflector gradients use the same complex
/// convention.
struct UnitaryParamGrad {
  Vector d1, d2, d3;
  CVector r1, r2;
};
UnitaryParamGrad unitary_param_grad(const UnitaryParam& p, const CMatrix& grad_u);

/// B = ∇U·Uᴴ − U·∇Uᴴ, with the rounding residue of B + Bᴴ removed.
CMatrix skew_hermitian_grad(const CMatrix& grad_u, const CMatrix& u);

/// exp(η·B)·U. Note the sign: with B built from ∇U this raises the loss for
/// η > 0, so descent passes a negative step.
CMatrix unitary_exp_update(const CMatrix& u, const CMatrix& b, double eta);

/// Nearest unitary matrix (complex polar factor).
CMatrix unitary_renormalize(const CMatrix& u);

/// Real 2n×2n form [[Re U, −Im U], [Im U, Re U]] acting on (Re z, Im z).
Matrix realify(const CMatrix& u);

/// Pulls ∂L/∂(realify(U)) back to ∇U = ∂L/∂Re U + i·∂L/∂Im U.
CMatrix complex_grad_from_realified(const Matrix& grad);

}  // namespace peft
