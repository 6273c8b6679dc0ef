#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "hsicbt/kernels.hpp"
#include "hsicbt/matrix.hpp"

namespace hsicbt {

/// Per-side working set of the normalized estimator: the raw Gram K, the
/// doubly-centered Kbar = H K H, and the normalized
/// Ktilde = Kbar (Kbar + eps*m*I)^-1. Eigenvalues of Ktilde lie in [0,1).
/// Immutable once built; reused by the gradient to avoid refactorizing.
struct NhsicCache {
  Matrix gram;
  Matrix centered;
  Matrix normalized;
  std::size_t m = 0;
};

namespace detail {
inline void require_same_square(const Matrix& kx, const Matrix& ky, const char* what) {
  if (kx.rows() != kx.cols() || ky.rows() != ky.cols())
    throw dimension_error(std::string(what) + ": Gram matrices must be square");
  if (kx.rows() != ky.rows())
    throw dimension_error(std::string(what) + ": Gram sizes differ (" +
                          std::to_string(kx.rows()) + " vs " + std::to_string(ky.rows()) + ")");
  if (kx.rows() < 2)
    throw dimension_error(std::string(what) + ": estimator needs m >= 2 samples");
}

// Row-centered product matrices: (K H)_ij = K_ij - mean_l K_il.
inline Matrix right_center(const Matrix& k) {
  const std::size_t m = k.rows();
  Matrix out(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < m; ++j) mean += k(i, j);
    mean /= static_cast<double>(m);
    for (std::size_t j = 0; j < m; ++j) out(i, j) = k(i, j) - mean;
  }
  return out;
}
}  // namespace detail

/// Per-sample decomposition of the biased estimator: the i-th entry is the
/// inner product of row i of K_X H with column i of K_Y H. The entries sum
/// to tr(K_X H K_Y H) = (m-1)^2 * hsic_biased on the same floating path.
inline std::vector<double> hsic_components(const Matrix& kx, const Matrix& ky) {
  detail::require_same_square(kx, ky, "hsic_components");
  const std::size_t m = kx.rows();
  const Matrix a = detail::right_center(kx);  // K_X H
  const Matrix b = detail::right_center(ky);  // K_Y H
  std::vector<double> comps(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += a(i, j) * b(j, i);
    comps[i] = s;
  }
  return comps;
}

/// Biased empirical HSIC from two Gram matrices:
/// (m-1)^-2 tr(K_X H K_Y H). Symmetric in its arguments, >= 0 for
/// positive semidefinite Grams up to round-off.
inline double hsic_biased(const Matrix& kx, const Matrix& ky) {
  detail::require_same_square(kx, ky, "hsic_biased");
  const std::size_t m = kx.rows();
  const std::vector<double> comps = hsic_components(kx, ky);
  double tr = 0.0;
  for (double c : comps) tr += c;
  const double denom = static_cast<double>(m - 1) * static_cast<double>(m - 1);
  return tr / denom;
}

/// Builds the normalized-estimator cache for one representation matrix:
/// K = gaussian_gram(z), Kbar = center(K),
/// Ktilde = Kbar (Kbar + eps*m*I)^-1 (symmetrized).
inline NhsicCache make_nhsic_cache(const Matrix& z, const KernelParams& params) {
  if (z.rows() < 2)
    throw dimension_error("nhsic: estimator needs m >= 2 samples");
  if (!(params.epsilon > 0.0))
    throw dimension_error("nhsic: epsilon must be positive");
  NhsicCache cache;
  cache.m = z.rows();
  cache.gram = gaussian_gram(z, params);
  cache.centered = center(cache.gram);
  const double ridge = params.epsilon * static_cast<double>(cache.m);
  // (Kbar + cI)^-1 Kbar equals Kbar (Kbar + cI)^-1 since they commute;
  // both are symmetric, so symmetrize to tame factorization round-off.
  Matrix solved = solve_spd(cache.centered, cache.centered, ridge);
  Matrix normalized(cache.m, cache.m);
  for (std::size_t i = 0; i < cache.m; ++i)
    for (std::size_t j = 0; j < cache.m; ++j)
      normalized(i, j) = 0.5 * (solved(i, j) + solved(j, i));
  cache.normalized = std::move(normalized);
  return cache;
}

/// tr(Ktilde_X Ktilde_Y) from two prebuilt caches.
inline double nhsic_value(const NhsicCache& cx, const NhsicCache& cy) {
  if (cx.m != cy.m)
    throw dimension_error("nhsic_value: cache sizes differ");
  double tr = 0.0;
  const std::size_t m = cx.m;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      tr += cx.normalized(i, j) * cy.normalized(j, i);
  return tr;
}

struct NhsicResult {
  double value = 0.0;
  NhsicCache x;
  NhsicCache y;
};

/// Normalized HSIC of two representation matrices (rows are samples):
/// tr(Ktilde_X Ktilde_Y) with Ktilde = Kbar (Kbar + eps*m*I)^-1.
/// Returns the per-side caches for gradient reuse.
inline NhsicResult nhsic(const Matrix& zx, const Matrix& zy, const KernelParams& params) {
  if (zx.rows() != zy.rows())
    throw dimension_error("nhsic: sample counts differ (" + std::to_string(zx.rows()) +
                          " vs " + std::to_string(zy.rows()) + ")");
  NhsicResult res;
  res.x = make_nhsic_cache(zx, params);
  res.y = make_nhsic_cache(zy, params);
  res.value = nhsic_value(res.x, res.y);
  return res;
}

/// Gradient of tr(Ktilde_X Ktilde_Y) with respect to the entries of zx,
/// holding zy fixed. Uses the identity Kbar(Kbar+cI)^-1 = I - c(Kbar+cI)^-1
/// with c = eps*m, so (Kbar+cI)^-1 = (I - Ktilde)/c comes straight from the
/// cache: d tr / d Kbar_X = (I-Ktilde_X) Ktilde_Y (I-Ktilde_X) / c, chained
/// through Kbar = H K H and the Gaussian kernel entries.
inline Matrix nhsic_grad_z(const Matrix& zx, const NhsicCache& cx, const NhsicCache& cy,
                           const KernelParams& params) {
  const std::size_t m = zx.rows();
  const std::size_t d = zx.cols();
  if (cx.m != m || cy.m != m)
    throw dimension_error("nhsic_grad_z: cache size does not match zx rows");
  if (cx.gram.rows() != m || cy.normalized.rows() != m)
    throw dimension_error("nhsic_grad_z: malformed cache");
  const double c = params.epsilon * static_cast<double>(m);

  // P = I - Ktilde_X; dF/dKbar_X = P Ktilde_Y P / c.
  Matrix p = scale(cx.normalized, -1.0);
  for (std::size_t i = 0; i < m; ++i) p(i, i) += 1.0;
  Matrix g_kbar = matmul(matmul(p, cy.normalized), p);
  g_kbar = scale(g_kbar, 1.0 / c);

  // Adjoint of Kbar = H K H is another double-centering.
  Matrix g_k = center(g_kbar);

  // Kernel chain: dK_ij/dz_i = -K_ij (z_i - z_j) / (sigma^2 d_eff).
  // With W = (G + G^T) .* K the gradient is -(diag(W1) - W) zx / (sigma^2 d_eff).
  Matrix w(m, m);
  std::vector<double> row_sum(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double v = (g_k(i, j) + g_k(j, i)) * cx.gram(i, j);
      w(i, j) = v;
      row_sum[i] += v;
    }
  }
  Matrix lap(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) lap(i, j) = -w(i, j);
    lap(i, i) += row_sum[i];
  }
  const double d_eff = params.dim_scaling ? static_cast<double>(d) : 1.0;
  Matrix grad = matmul(lap, zx);
  grad = scale(grad, -1.0 / (params.sigma * params.sigma * d_eff));
  detail::require_finite(grad, "nhsic_grad_z");
  return grad;
}

/// Self-HSIC computed three independent ways, all scaled by (m-1)^-2 and
/// using the centered matrix Kbar = H K H: the trace of Kbar^2 via an
/// explicit product, the squared Frobenius norm elementwise, and the sum
/// of squared eigenvalues. The three agree up to round-off.
struct SelfHsicDiagnostics {
  double trace_form = 0.0;
  double frobenius_form = 0.0;
  double eig_sum_sq = 0.0;
};

inline SelfHsicDiagnostics self_hsic_diagnostics(const Matrix& z, const KernelParams& params) {
  if (z.rows() < 2)
    throw dimension_error("self_hsic_diagnostics: needs m >= 2 samples");
  const std::size_t m = z.rows();
  const Matrix k = gaussian_gram(z, params);
  const Matrix kbar = center(k);
  const double denom = static_cast<double>(m - 1) * static_cast<double>(m - 1);

  SelfHsicDiagnostics diag;
  diag.trace_form = trace(matmul(kbar, kbar)) / denom;
  diag.frobenius_form = frobenius_dot(kbar, kbar) / denom;
  double sum_sq = 0.0;
  for (double lambda : eigvals_sym(kbar)) sum_sq += lambda * lambda;
  diag.eig_sum_sq = sum_sq / denom;
  return diag;
}

}  // namespace hsicbt
