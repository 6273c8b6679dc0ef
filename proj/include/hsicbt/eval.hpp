#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "hsicbt/matrix.hpp"
#include "hsicbt/metrics.hpp"

namespace hsicbt {

/// Fixed class-to-output assignment read off an unformatted-trained
/// network; always a bijection.
struct PermutationMap {
  std::vector<int> class_to_output;  // entry k = output index for class k
  bool is_bijection() const {
    std::vector<bool> seen(class_to_output.size(), false);
    for (int o : class_to_output) {
      if (o < 0 || static_cast<std::size_t>(o) >= class_to_output.size() || seen[o]) return false;
      seen[o] = true;
    }
    return true;
  }
};

/// Per-class mean of the last-layer activations (c x c for c classes).
inline Matrix class_mean_activations(const Matrix& z_last, const std::vector<int>& labels,
                                     int num_classes) {
  if (z_last.rows() != labels.size())
    throw dimension_error("class means: row/label count mismatch");
  Matrix means(num_classes, z_last.cols());
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t i = 0; i < z_last.rows(); ++i) {
    const int cls = labels[i];
    if (cls < 0 || cls >= num_classes)
      throw data_error("class means: label " + std::to_string(cls) + " out of range");
    ++counts[cls];
    for (std::size_t j = 0; j < z_last.cols(); ++j) means(cls, j) += z_last(i, j);
  }
  for (int k = 0; k < num_classes; ++k) {
    if (counts[k] == 0)
      throw data_error("infer_permutation: class " + std::to_string(k) +
                       " has no samples");
    for (std::size_t j = 0; j < z_last.cols(); ++j)
      means(k, j) /= static_cast<double>(counts[k]);
  }
  return means;
}

namespace detail {

// Exact max-total assignment on a square score matrix (Hungarian algorithm
// with potentials, O(c^3)). Returns row -> column.
inline std::vector<int> max_assignment(const Matrix& score) {
  const int n = static_cast<int>(score.rows());
  const double inf = std::numeric_limits<double>::infinity();
  // Minimize negated scores; 1-based helper arrays per the classic scheme.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = match[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = -score(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n);
  for (int j = 1; j <= n; ++j)
    if (match[j] != 0) row_to_col[match[j] - 1] = j - 1;
  return row_to_col;
}

}  // namespace detail

/// Infers the class-to-output permutation from last-layer activations:
/// each class takes the argmax of its mean activation vector; if two
/// classes collide on an output, the conflict is resolved by an exact
/// maximum-total-mass assignment over the class-mean matrix, so the result
/// is always a bijection. Deterministic; argmax ties break low.
inline PermutationMap infer_permutation(const Matrix& z_last, const std::vector<int>& labels) {
  const int c = static_cast<int>(z_last.cols());
  if (c < 1) throw dimension_error("infer_permutation: no output columns");
  const Matrix means = class_mean_activations(z_last, labels, c);

  PermutationMap perm;
  perm.class_to_output.resize(c);
  std::vector<bool> taken(c, false);
  bool collision = false;
  for (int k = 0; k < c; ++k) {
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (means(k, j) > means(k, best)) best = j;
    perm.class_to_output[k] = best;
    if (taken[best]) collision = true;
    taken[best] = true;
  }
  if (collision) perm.class_to_output = detail::max_assignment(means);
  return perm;
}

/// Predicted class per row: the inverse permutation applied to the argmax
/// output, ties broken toward the lowest index.
inline std::vector<int> classify(const Matrix& z_last, const PermutationMap& perm) {
  const std::size_t c = perm.class_to_output.size();
  if (z_last.cols() != c)
    throw dimension_error("classify: output width does not match permutation size");
  std::vector<int> output_to_class(c);
  for (std::size_t k = 0; k < c; ++k) output_to_class[perm.class_to_output[k]] = static_cast<int>(k);
  std::vector<int> pred(z_last.rows());
  for (std::size_t i = 0; i < z_last.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (z_last(i, j) > z_last(i, best)) best = j;
    pred[i] = output_to_class[best];
  }
  return pred;
}

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size())
    throw dimension_error("accuracy: prediction/truth length mismatch");
  if (pred.empty()) throw dimension_error("accuracy: empty inputs");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == truth[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

/// How one-hot the class-mean activations look: mean over classes of
/// (largest - second largest) / (largest - smallest), clamped to [0,1].
/// Degenerate constant rows contribute zero.
inline double onehotness(const Matrix& z_last, const std::vector<int>& labels) {
  const int c = static_cast<int>(z_last.cols());
  if (c < 2) throw dimension_error("onehotness: needs at least two outputs");
  const Matrix means = class_mean_activations(z_last, labels, c);
  double total = 0.0;
  for (int k = 0; k < c; ++k) {
    double hi = means(k, 0), second = -std::numeric_limits<double>::infinity(), lo = means(k, 0);
    for (int j = 1; j < c; ++j) {
      const double v = means(k, j);
      if (v > hi) {
        second = hi;
        hi = v;
      } else if (v > second) {
        second = v;
      }
      lo = std::min(lo, v);
    }
    if (hi - lo > 0.0) total += std::clamp((hi - second) / (hi - lo), 0.0, 1.0);
  }
  return total / static_cast<double>(c);
}

}  // namespace hsicbt
