#pragma once

// Independent reference implementations used only by tests: brute-force
// estimator evaluation, finite differences, exhaustive assignment search,
// and seeded random inputs. Nothing here may call into the library paths
// it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "hsicbt/matrix.hpp"

namespace oracle {

inline hsicbt::Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                                    double lo = -1.0, double hi = 1.0) {
  hsicbt::Matrix m(rows, cols);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

inline hsicbt::Matrix random_spd(std::size_t n, std::uint64_t seed) {
  const hsicbt::Matrix a = random_matrix(n, n, seed);
  hsicbt::Matrix spd(n, n);
  // A^T A + n*I via explicit loops.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += a(k, i) * a(k, j);
      spd(i, j) = s + (i == j ? static_cast<double>(n) : 0.0);
    }
  return spd;
}

inline hsicbt::Matrix random_gram(std::size_t m, std::uint64_t seed, double sigma = 1.0) {
  const hsicbt::Matrix z = random_matrix(m, 3, seed);
  hsicbt::Matrix k(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double diff = z(i, c) - z(j, c);
        d2 += diff * diff;
      }
      k(i, j) = std::exp(-d2 / (2.0 * sigma * sigma));
    }
  return k;
}

// Naive triple-loop product.
inline hsicbt::Matrix matmul_naive(const hsicbt::Matrix& a, const hsicbt::Matrix& b) {
  hsicbt::Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k)
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += a(i, k) * b(k, j);
  return out;
}

// Element-wise evaluation of (m-1)^-2 tr(K_X H K_Y H) with an explicit
// centering matrix and naive products.
inline double hsic_brute_force(const hsicbt::Matrix& kx, const hsicbt::Matrix& ky) {
  const std::size_t m = kx.rows();
  hsicbt::Matrix h(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      h(i, j) = (i == j ? 1.0 : 0.0) - 1.0 / static_cast<double>(m);
  const hsicbt::Matrix prod = matmul_naive(matmul_naive(matmul_naive(kx, h), ky), h);
  double tr = 0.0;
  for (std::size_t i = 0; i < m; ++i) tr += prod(i, i);
  return tr / (static_cast<double>(m - 1) * static_cast<double>(m - 1));
}

// Central finite differences of a scalar function of a matrix.
inline hsicbt::Matrix finite_diff(const std::function<double(const hsicbt::Matrix&)>& f,
                                  const hsicbt::Matrix& at, double step = 1e-5) {
  hsicbt::Matrix grad(at.rows(), at.cols());
  hsicbt::Matrix probe = at;
  for (std::size_t i = 0; i < at.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + step;
    const double up = f(probe);
    probe.data()[i] = orig - step;
    const double down = f(probe);
    probe.data()[i] = orig;
    grad.data()[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

// Relative discrepancy between an analytic gradient and its FD estimate:
// max |a_i - b_i| / max(1e-8, ||b||_inf).
inline double grad_rel_err(const hsicbt::Matrix& analytic, const hsicbt::Matrix& fd) {
  double max_diff = 0.0, max_ref = 1e-8;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    max_diff = std::max(max_diff, std::abs(analytic.values()[i] - fd.values()[i]));
    max_ref = std::max(max_ref, std::abs(fd.values()[i]));
  }
  return max_diff / max_ref;
}

// Exhaustive maximum-total-mass assignment over all c! permutations.
inline std::pair<std::vector<int>, double> best_assignment_exhaustive(const hsicbt::Matrix& score) {
  const int c = static_cast<int>(score.rows());
  std::vector<int> perm(c);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_mass = -1e300;
  do {
    double mass = 0.0;
    for (int k = 0; k < c; ++k) mass += score(k, perm[k]);
    if (mass > best_mass) {
      best_mass = mass;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return {best, best_mass};
}

}  // namespace oracle
