#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "hsicbt/errors.hpp"

namespace hsicbt {

/// Dense row-major matrix of 64-bit reals. The single numeric carrier for
/// data batches, Gram matrices, and network parameters. Immutable from the
/// caller's perspective once handed to an operation; safe to share
/// read-only across threads.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix constant(std::size_t rows, std::size_t cols, double value) {
    Matrix m(rows, cols);
    m.data_.assign(rows * cols, value);
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  const std::vector<double>& values() const { return data_; }

  const double* row(std::size_t i) const { return data_.data() + i * cols_; }
  double* row(std::size_t i) { return data_.data() + i * cols_; }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

using EigenRowMajor =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const EigenRowMajor> as_eigen(const Matrix& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()),
          static_cast<Eigen::Index>(m.cols())};
}

inline Eigen::Map<EigenRowMajor> as_eigen(Matrix& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()),
          static_cast<Eigen::Index>(m.cols())};
}

namespace detail {
inline void require_finite(const Matrix& m, const char* what) {
  if (!m.all_finite())
    throw numerical_error(std::string(what) + ": non-finite entries in result");
}
}  // namespace detail

/// Standard matrix product, (a.rows x b.cols).
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw dimension_error("matmul: inner dimensions differ (" +
                          std::to_string(a.cols()) + " vs " +
                          std::to_string(b.rows()) + ")");
  Matrix out(a.rows(), b.cols());
  as_eigen(out).noalias() = as_eigen(a) * as_eigen(b);
  detail::require_finite(out, "matmul");
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  as_eigen(out) = as_eigen(a).transpose();
  return out;
}

/// Solves (a + ridge*I) x = b via Cholesky, never forming the inverse.
/// `a` must be square; only its lower triangle is referenced. Throws
/// numerical_error carrying the pivot index if positive definiteness is
/// lost during factorization.
inline Matrix solve_spd(const Matrix& a, const Matrix& b, double ridge) {
  const std::size_t n = a.rows();
  if (a.cols() != n)
    throw dimension_error("solve_spd: matrix must be square, got " +
                          std::to_string(n) + "x" + std::to_string(a.cols()));
  if (b.rows() != n)
    throw dimension_error("solve_spd: rhs row count " + std::to_string(b.rows()) +
                          " does not match system size " + std::to_string(n));
  if (!(ridge > 0.0))
    throw dimension_error("solve_spd: ridge must be positive");

  // In-place lower Cholesky of a + ridge*I.
  Matrix l(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) l(i, j) = a(i, j);
  for (std::size_t i = 0; i < n; ++i) l(i, i) += ridge;

  for (std::size_t k = 0; k < n; ++k) {
    double d = l(k, k);
    for (std::size_t j = 0; j < k; ++j) d -= l(k, j) * l(k, j);
    if (!(d > 0.0) || !std::isfinite(d))
      throw numerical_error("solve_spd: factorization lost positive definiteness at pivot " +
                                std::to_string(k),
                            static_cast<int>(k));
    const double diag = std::sqrt(d);
    l(k, k) = diag;
    for (std::size_t i = k + 1; i < n; ++i) {
      double s = l(i, k);
      for (std::size_t j = 0; j < k; ++j) s -= l(i, j) * l(k, j);
      l(i, k) = s / diag;
    }
  }

  // Forward and back substitution, all right-hand sides at once.
  const std::size_t r = b.cols();
  Matrix x = b;
  for (std::size_t i = 0; i < n; ++i) {
    const double inv = 1.0 / l(i, i);
    for (std::size_t c = 0; c < r; ++c) {
      double s = x(i, c);
      for (std::size_t j = 0; j < i; ++j) s -= l(i, j) * x(j, c);
      x(i, c) = s * inv;
    }
  }
  for (std::size_t ii = n; ii-- > 0;) {
    const double inv = 1.0 / l(ii, ii);
    for (std::size_t c = 0; c < r; ++c) {
      double s = x(ii, c);
      for (std::size_t j = ii + 1; j < n; ++j) s -= l(j, ii) * x(j, c);
      x(ii, c) = s * inv;
    }
  }
  detail::require_finite(x, "solve_spd");
  return x;
}

/// Eigenvalues of a symmetric matrix, descending. `a` must be symmetric
/// within 1e-10; the sum of the result equals trace(a) up to round-off.
inline std::vector<double> eigvals_sym(const Matrix& a) {
  const std::size_t n = a.rows();
  if (a.cols() != n)
    throw dimension_error("eigvals_sym: matrix must be square");
  double max_asym = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      max_asym = std::max(max_asym, std::abs(a(i, j) - a(j, i)));
  if (max_asym > 1e-10)
    throw data_error("eigvals_sym: matrix asymmetric beyond tolerance (max |a_ij - a_ji| = " +
                     std::to_string(max_asym) + ")");

  Eigen::SelfAdjointEigenSolver<EigenRowMajor> solver(
      as_eigen(a), Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success)
    throw numerical_error("eigvals_sym: eigenvalue iteration failed to converge");
  std::vector<double> vals(n);
  for (std::size_t i = 0; i < n; ++i) vals[i] = solver.eigenvalues()[n - 1 - i];
  return vals;
}

inline double trace(const Matrix& a) {
  double t = 0.0;
  for (std::size_t i = 0; i < std::min(a.rows(), a.cols()); ++i) t += a(i, i);
  return t;
}

inline double frobenius_dot(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

inline double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.values()) m = std::max(m, std::abs(v));
  return m;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw dimension_error("add: shape mismatch");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.values()[i];
  return out;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw dimension_error("sub: shape mismatch");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.values()[i];
  return out;
}

inline Matrix scale(const Matrix& a, double s) {
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= s;
  return out;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw dimension_error("hadamard: shape mismatch");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.values()[i];
  return out;
}

}  // namespace hsicbt
