#include "peft/adapters/unitary.hpp"

#include <cmath>

#include "peft/numerics/linalg.hpp"

namespace peft {

UnitaryParam UnitaryParam::identity_like(std::size_t n, std::mt19937_64& rng) {
  UnitaryParam p;
  p.dim = n;
  p.d1.assign(n, 0.0);
  p.d2.assign(n, 0.0);
  p.d3.assign(n, 0.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (CVector* r : {&p.r1, &p.r2}) {
    r->resize(n);
    for (auto& z : *r) z = Complex(nd(rng), nd(rng));
    const double nrm = norm2(*r);
    for (auto& z : *r) z /= nrm;
  }
  p.perm = bit_reversal_permutation(n);
  p.u = unitary_compose(p);
  return p;
}

void validate(const UnitaryParam& p) {
  log2_exact(p.dim);
  const std::size_t n = p.dim;
  if (p.d1.size() != n || p.d2.size() != n || p.d3.size() != n || p.r1.size() != n ||
      p.r2.size() != n || p.perm.size() != n) {
    throw InvalidInput("unitary: parameter vectors must have length dim");
  }
  if (norm2(p.r1) == 0.0 || norm2(p.r2) == 0.0) throw InvalidInput("unitary: zero reflector");
  std::vector<bool> seen(n, false);
  for (auto k : p.perm) {
    if (k >= n || seen[k]) throw InvalidInput("unitary: perm is not a permutation");
    seen[k] = true;
  }
}

namespace {

void apply_phases(const Vector& theta, CVector& x, OpCounter* counter) {
  for (std::size_t j = 0; j < x.size(); ++j) x[j] *= std::polar(1.0, theta[j]);
  if (counter) counter->add(8 * x.size());
}

CVector permute(const std::vector<std::size_t>& perm, const CVector& x) {
  CVector y(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) y[k] = x[perm[k]];
  return y;
}

// Forward through all factors, recording the output of every stage.
std::vector<CVector> forward_stages(const UnitaryParam& p, CVector x, OpCounter* counter) {
  std::vector<CVector> st;
  st.reserve(9);
  st.push_back(x);
  apply_phases(p.d1, x, counter);
  st.push_back(x);
  x = fft_apply(x, counter);
  st.push_back(x);
  x = householder_apply(p.r1, x, counter);
  st.push_back(x);
  x = permute(p.perm, x);
  st.push_back(x);
  apply_phases(p.d2, x, counter);
  st.push_back(x);
  x = ifft_apply(x, counter);
  st.push_back(x);
  x = householder_apply(p.r2, x, counter);
  st.push_back(x);
  apply_phases(p.d3, x, counter);
  st.push_back(std::move(x));
  return st;
}

void phase_backward(const Vector& theta, const CVector& y, CVector& g, Vector& grad_theta) {
  for (std::size_t j = 0; j < g.size(); ++j) {
    grad_theta[j] += std::real(std::conj(g[j]) * Complex(0.0, 1.0) * y[j]);
    g[j] *= std::polar(1.0, -theta[j]);
  }
}

void householder_backward(const CVector& v, const CVector& x, CVector& g, CVector& grad_v) {
  double c = 0.0;
  Complex w{}, beta{};
  for (std::size_t i = 0; i < v.size(); ++i) {
    c += std::norm(v[i]);
    w += std::conj(v[i]) * x[i];
    beta += std::conj(g[i]) * v[i];
  }
  const double rho = std::real(w * beta);
  for (std::size_t i = 0; i < v.size(); ++i) {
    grad_v[i] += -(2.0 / c) * (std::conj(w) * g[i] + beta * x[i]) + (4.0 * rho / (c * c)) * v[i];
  }
  g = householder_apply(v, g);
}

}  // namespace

CVector unitary_matvec(const UnitaryParam& p, std::span<const Complex> x, OpCounter* counter) {
  validate(p);
  if (x.size() != p.dim) throw InvalidInput("unitary_matvec: dimension mismatch");
  return forward_stages(p, CVector(x.begin(), x.end()), counter).back();
}

CMatrix unitary_compose(const UnitaryParam& p) {
  validate(p);
  const std::size_t n = p.dim;
  CMatrix u(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    CVector e(n, Complex{});
    e[c] = 1.0;
    auto col = forward_stages(p, std::move(e), nullptr).back();
    for (std::size_t i = 0; i < n; ++i) u(i, c) = col[i];
  }
  return u;
}

UnitaryParamGrad unitary_param_grad(const UnitaryParam& p, const CMatrix& grad_u) {
  validate(p);
  const std::size_t n = p.dim;
  if (grad_u.rows() != n || grad_u.cols() != n) throw InvalidInput("unitary_param_grad: shape mismatch");
  UnitaryParamGrad out{Vector(n, 0.0), Vector(n, 0.0), Vector(n, 0.0), CVector(n), CVector(n)};
  for (std::size_t c = 0; c < n; ++c) {
    CVector e(n, Complex{});
    e[c] = 1.0;
    const auto st = forward_stages(p, std::move(e), nullptr);
    CVector g(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = grad_u(i, c);

    phase_backward(p.d3, st[8], g, out.d3);
    householder_backward(p.r2, st[6], g, out.r2);
    g = fft_apply(g);  // adjoint of F⁻¹
    phase_backward(p.d2, st[5], g, out.d2);
    CVector unperm(n);
    for (std::size_t k = 0; k < n; ++k) unperm[p.perm[k]] = g[k];
    g = std::move(unperm);
    householder_backward(p.r1, st[2], g, out.r1);
    g = ifft_apply(g);  // adjoint of F
    phase_backward(p.d1, st[1], g, out.d1);
  }
  return out;
}

CMatrix skew_hermitian_grad(const CMatrix& grad_u, const CMatrix& u) {
  if (!u.is_square() || !grad_u.same_shape(u)) throw InvalidInput("skew_hermitian_grad: shape mismatch");
  auto b = matmul(grad_u, u.adjoint()) - matmul(u, grad_u.adjoint());
  auto bh = b.adjoint();
  b -= bh;
  b *= Complex(0.5);
  return b;
}

CMatrix unitary_exp_update(const CMatrix& u, const CMatrix& b, double eta) {
  if (!b.is_square() || b.cols() != u.rows()) throw InvalidInput("unitary_exp_update: shape mismatch");
  if (eta == 0.0) return u;
  auto step = b;
  step *= Complex(eta);
  return matmul(matrix_exp(step), u);
}

CMatrix unitary_renormalize(const CMatrix& u) { return polar_project(u); }

Matrix realify(const CMatrix& u) {
  const std::size_t n = u.rows(), m = u.cols();
  Matrix r(2 * n, 2 * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double re = u(i, j).real(), im = u(i, j).imag();
      r(i, j) = re;
      r(i, j + m) = -im;
      r(i + n, j) = im;
      r(i + n, j + m) = re;
    }
  return r;
}

CMatrix complex_grad_from_realified(const Matrix& grad) {
  if (grad.rows() % 2 != 0 || grad.cols() % 2 != 0) throw InvalidInput("complex_grad_from_realified: odd shape");
  const std::size_t n = grad.rows() / 2, m = grad.cols() / 2;
  CMatrix g(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      g(i, j) = Complex(grad(i, j) + grad(i + n, j + m), grad(i + n, j) - grad(i, j + m));
  return g;
}

}  // namespace peft
