#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "peft/numerics/errors.hpp"

namespace peft {

using Complex = std::complex<double>;

template <typename T>
struct is_complex : std::false_type {};
template <typename T>
struct is_complex<std::complex<T>> : std::true_type {};

inline double conj_of(double x) { return x; }
inline Complex conj_of(const Complex& z) { return std::conj(z); }
inline double abs2(double x) { return x * x; }
inline double abs2(const Complex& z) { return std::norm(z); }

/// Dense row-major matrix. Used for every weight, gradient and delta in the
/// library; the complex instantiation carries unitary factors.
template <typename T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw InvalidInput("matrix data length " + std::to_string(data_.size()) +
                         " does not match " + std::to_string(rows_) + "x" +
                         std::to_string(cols_));
    }
  }
  BasicMatrix(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw InvalidInput("ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static BasicMatrix identity(std::size_t n) {
    BasicMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool is_square() const { return rows_ == cols_; }
  bool same_shape(const BasicMatrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& values() const { return data_; }
  std::span<T> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const T> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  BasicMatrix& operator+=(const BasicMatrix& o) {
    require_same_shape(o, "+=");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }
  BasicMatrix& operator-=(const BasicMatrix& o) {
    require_same_shape(o, "-=");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
    return *this;
  }
  BasicMatrix& operator*=(T s) {
    for (auto& x : data_) x *= s;
    return *this;
  }

  friend BasicMatrix operator+(BasicMatrix a, const BasicMatrix& b) { return a += b; }
  friend BasicMatrix operator-(BasicMatrix a, const BasicMatrix& b) { return a -= b; }
  friend BasicMatrix operator*(BasicMatrix a, T s) { return a *= s; }
  friend BasicMatrix operator*(T s, BasicMatrix a) { return a *= s; }
  friend bool operator==(const BasicMatrix& a, const BasicMatrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

  BasicMatrix transpose() const {
    BasicMatrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  /// Conjugate transpose; identical to transpose() for real matrices.
  BasicMatrix adjoint() const {
    BasicMatrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = conj_of((*this)(i, j));
    return t;
  }

  bool all_finite() const {
    for (const auto& x : data_) {
      if constexpr (is_complex<T>::value) {
        if (!std::isfinite(x.real()) || !std::isfinite(x.imag())) return false;
      } else {
        if (!std::isfinite(x)) return false;
      }
    }
    return true;
  }

 private:
  void require_same_shape(const BasicMatrix& o, const char* op) const {
    if (!same_shape(o)) {
      throw InvalidInput(std::string("shape mismatch in ") + op + ": " + std::to_string(rows_) +
                         "x" + std::to_string(cols_) + " vs " + std::to_string(o.rows_) + "x" +
                         std::to_string(o.cols_));
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<double>;
using CMatrix = BasicMatrix<Complex>;
using Vector = std::vector<double>;
using CVector = std::vector<Complex>;

template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw InvalidInput("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                       " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  BasicMatrix<T> c(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    T* ci = c.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T aik = a(i, k);
      if (aik == T{}) continue;
      const T* bk = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

/// a * bᵀ without forming the transpose.
template <typename T>
BasicMatrix<T> matmul_a_bt(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.cols()) throw InvalidInput("matmul_a_bt: inner dimension mismatch");
  BasicMatrix<T> c(a.rows(), b.rows());
  const std::size_t inner = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const T* ai = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const T* bj = b.row(j).data();
      T acc{};
      for (std::size_t k = 0; k < inner; ++k) acc += ai[k] * bj[k];
      c(i, j) = acc;
    }
  }
  return c;
}

/// aᵀ * b without forming the transpose.
template <typename T>
BasicMatrix<T> matmul_at_b(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.rows() != b.rows()) throw InvalidInput("matmul_at_b: inner dimension mismatch");
  BasicMatrix<T> c(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const T* ak = a.row(k).data();
    const T* bk = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const T aki = ak[i];
      if (aki == T{}) continue;
      T* ci = c.row(i).data();
      for (std::size_t j = 0; j < n; ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

template <typename T>
std::vector<T> matvec(const BasicMatrix<T>& a, std::span<const T> x) {
  if (a.cols() != x.size()) throw InvalidInput("matvec: dimension mismatch");
  std::vector<T> y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    T acc{};
    const auto r = a.row(i);
    for (std::size_t j = 0; j < x.size(); ++j) acc += r[j] * x[j];
    y[i] = acc;
  }
  return y;
}

template <typename T>
double frobenius_norm(const BasicMatrix<T>& m) {
  double s = 0.0;
  for (const auto& x : m.data()) s += abs2(x);
  return std::sqrt(s);
}

template <typename T>
double norm2(std::span<const T> v) {
  double s = 0.0;
  for (const auto& x : v) s += abs2(x);
  return std::sqrt(s);
}
inline double norm2(const Vector& v) { return norm2(std::span<const double>(v)); }
inline double norm2(const CVector& v) { return norm2(std::span<const Complex>(v)); }

/// ‖XᴴX − I‖_F, the orthogonality / unitarity residual used throughout.
template <typename T>
double orthogonality_residual(const BasicMatrix<T>& x) {
  auto g = matmul(x.adjoint(), x);
  for (std::size_t i = 0; i < g.rows(); ++i) g(i, i) -= T{1};
  return frobenius_norm(g);
}

template <typename T>
double max_abs_diff(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (!a.same_shape(b)) throw InvalidInput("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a.data()[k] - b.data()[k]));
  return m;
}

CMatrix to_complex(const Matrix& m);
Matrix real_part(const CMatrix& m);
Matrix imag_part(const CMatrix& m);

/// Scales column j of m by s[j].
template <typename T>
BasicMatrix<T> scale_columns(BasicMatrix<T> m, std::span<const double> s) {
  if (s.size() != m.cols()) throw InvalidInput("scale_columns: length mismatch");
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) *= s[j];
  return m;
}

}  // namespace peft
