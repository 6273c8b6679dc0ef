#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "hsicbt/matrix.hpp"

namespace hsicbt {

/// Gaussian kernel configuration. With dim_scaling on (the default) the
/// kernel is k(x,y) = exp(-||x-y||^2 / (2 sigma^2 d)) where d is the
/// feature dimensionality of the matrix the Gram is built from; with it
/// off, the divisor is plain 2 sigma^2. epsilon is the regularizer of the
/// normalized estimator.
struct KernelParams {
  double sigma = 5.0;
  double epsilon = 1e-5;
  bool dim_scaling = true;
};

/// Pairwise Gaussian Gram matrix of the rows of z (m x d -> m x m).
/// Symmetric with unit diagonal, entries in (0,1].
inline Matrix gaussian_gram(const Matrix& z, const KernelParams& params) {
  const std::size_t m = z.rows();
  const std::size_t d = z.cols();
  if (m < 1 || d < 1)
    throw dimension_error("gaussian_gram: need at least one row and one column");
  if (!(params.sigma > 0.0))
    throw dimension_error("gaussian_gram: sigma must be positive");
  if (!z.all_finite())
    throw data_error("gaussian_gram: non-finite entries in input rows");

  // Squared distances via the expanded form ||zi||^2 + ||zj||^2 - 2 zi.zj,
  // clamped at zero to kill negative round-off.
  Matrix cross(m, m);
  as_eigen(cross).noalias() = as_eigen(z) * as_eigen(z).transpose();
  std::vector<double> sq(m);
  for (std::size_t i = 0; i < m; ++i) sq[i] = cross(i, i);

  const double divisor =
      2.0 * params.sigma * params.sigma * (params.dim_scaling ? static_cast<double>(d) : 1.0);
  Matrix k(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    k(i, i) = 1.0;
    for (std::size_t j = i + 1; j < m; ++j) {
      const double dist2 = std::max(0.0, sq[i] + sq[j] - 2.0 * cross(i, j));
      const double v = std::exp(-dist2 / divisor);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

/// The centering matrix H = I - (1/m) 11^T. Symmetric, idempotent,
/// row sums zero.
inline Matrix centering_matrix(std::size_t m) {
  if (m == 0) throw dimension_error("centering_matrix: m must be positive");
  const double off = -1.0 / static_cast<double>(m);
  Matrix h = Matrix::constant(m, m, off);
  for (std::size_t i = 0; i < m; ++i) h(i, i) += 1.0;
  return h;
}

/// Double-centers a square matrix: H k H, computed through row/column
/// means rather than explicit products. Row and column sums of the result
/// vanish up to round-off.
inline Matrix center(const Matrix& k) {
  const std::size_t m = k.rows();
  if (k.cols() != m)
    throw dimension_error("center: matrix must be square, got " +
                          std::to_string(m) + "x" + std::to_string(k.cols()));
  std::vector<double> row_mean(m, 0.0), col_mean(m, 0.0);
  double grand = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      row_mean[i] += k(i, j);
      col_mean[j] += k(i, j);
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    grand += row_mean[i];
    row_mean[i] /= static_cast<double>(m);
  }
  grand /= static_cast<double>(m) * static_cast<double>(m);
  for (std::size_t j = 0; j < m; ++j) col_mean[j] /= static_cast<double>(m);

  Matrix out(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      out(i, j) = k(i, j) - row_mean[i] - col_mean[j] + grand;
  return out;
}

}  // namespace hsicbt
