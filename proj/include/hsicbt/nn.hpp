#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hsicbt/matrix.hpp"

namespace hsicbt {

enum class Activation { relu, tanh, identity };

inline Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "identity") return Activation::identity;
  throw dimension_error("unknown activation '" + name + "'");
}

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    default: return "identity";
  }
}

/// Affine layer, x -> x W + b with W (d_in x d_out) and b a row vector.
struct DenseLayer {
  Matrix w;
  Matrix b;  // 1 x d_out
  std::size_t in_dim() const { return w.rows(); }
  std::size_t out_dim() const { return w.cols(); }
};

/// Batch normalization state. Batch statistics use the biased variance;
/// running statistics follow running = momentum*running + (1-momentum)*batch
/// and are only advanced when a trainer asks for it.
struct BatchNorm {
  Matrix gamma, beta;               // 1 x d
  Matrix running_mean, running_var; // 1 x d
  double momentum = 0.9;
  double bn_eps = 1e-5;
};

/// One unit T_i of the network: dense, then optional batch norm, then the
/// activation. The HSIC objective attaches to the post-activation output,
/// and the batch-norm affine parameters belong to this block's theta.
struct Block {
  DenseLayer dense;
  std::optional<BatchNorm> bn;
  Activation act = Activation::relu;
};

struct Network {
  std::vector<Block> blocks;
  std::size_t depth() const { return blocks.size(); }
  std::size_t input_dim() const { return blocks.front().dense.in_dim(); }
  std::size_t output_dim() const { return blocks.back().dense.out_dim(); }
};

enum class Mode { train, eval };

/// Full activation trace of a forward pass: z[0] is the input batch,
/// z[i] the post-activation output of block i.
struct Activations {
  std::vector<Matrix> z;
  const Matrix& last() const { return z.back(); }
};

namespace detail {

inline void apply_activation(Matrix& m, Activation act) {
  switch (act) {
    case Activation::relu:
      for (std::size_t i = 0; i < m.size(); ++i)
        if (m.data()[i] < 0.0) m.data()[i] = 0.0;
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = std::tanh(m.data()[i]);
      break;
    case Activation::identity:
      break;
  }
}

}  // namespace detail

/// Intermediates of one block forward, kept for the backward pass.
struct BlockTrace {
  Matrix preact;      // a = x W + b
  Matrix mean, var;   // batch statistics (1 x d), train mode only
  Matrix inv_std;     // 1 / sqrt(var + bn_eps)
  Matrix normalized;  // h = (a - mean) * inv_std
  Matrix affine;      // u = gamma .* h + beta (equals preact without BN)
  Matrix out;         // act(u)
};

/// Forward through one block. In train mode batch statistics normalize;
/// in eval mode the running statistics do. Running statistics advance only
/// when `update_running` is set (train mode).
inline Matrix block_forward(const Block& block, const Matrix& x, Mode mode,
                            BlockTrace* trace = nullptr, BatchNorm* running_update = nullptr) {
  if (x.cols() != block.dense.in_dim())
    throw dimension_error("forward: input width " + std::to_string(x.cols()) +
                          " does not match layer input " + std::to_string(block.dense.in_dim()));
  const std::size_t m = x.rows();
  const std::size_t d = block.dense.out_dim();

  Matrix a(m, d);
  as_eigen(a).noalias() = as_eigen(x) * as_eigen(block.dense.w);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) a(i, j) += block.dense.b(0, j);

  Matrix u;
  Matrix mean, var, inv_std, h;
  if (block.bn) {
    const BatchNorm& bn = *block.bn;
    mean = Matrix(1, d);
    var = Matrix(1, d);
    inv_std = Matrix(1, d);
    if (mode == Mode::train) {
      for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += a(i, j);
        mean(0, j) = s / static_cast<double>(m);
      }
      for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double c = a(i, j) - mean(0, j);
          s += c * c;
        }
        var(0, j) = s / static_cast<double>(m);
      }
      if (running_update) {
        for (std::size_t j = 0; j < d; ++j) {
          running_update->running_mean(0, j) =
              bn.momentum * running_update->running_mean(0, j) + (1.0 - bn.momentum) * mean(0, j);
          running_update->running_var(0, j) =
              bn.momentum * running_update->running_var(0, j) + (1.0 - bn.momentum) * var(0, j);
        }
      }
    } else {
      mean = bn.running_mean;
      var = bn.running_var;
    }
    for (std::size_t j = 0; j < d; ++j) inv_std(0, j) = 1.0 / std::sqrt(var(0, j) + bn.bn_eps);

    h = Matrix(m, d);
    u = Matrix(m, d);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        const double hv = (a(i, j) - mean(0, j)) * inv_std(0, j);
        h(i, j) = hv;
        u(i, j) = bn.gamma(0, j) * hv + bn.beta(0, j);
      }
    }
  } else {
    u = a;
  }

  Matrix out = u;
  detail::apply_activation(out, block.act);

  if (trace) {
    trace->preact = std::move(a);
    trace->mean = std::move(mean);
    trace->var = std::move(var);
    trace->inv_std = std::move(inv_std);
    trace->normalized = std::move(h);
    trace->affine = std::move(u);
    trace->out = out;
  }
  return out;
}

/// Full forward pass recording every hidden representation. Train mode may
/// update running statistics (pass the owning network, non-const overload).
inline Activations forward(Network& net, const Matrix& x, Mode mode,
                           bool update_running = false) {
  Activations acts;
  acts.z.reserve(net.depth() + 1);
  acts.z.push_back(x);
  for (auto& block : net.blocks) {
    BatchNorm* upd = (mode == Mode::train && update_running && block.bn) ? &*block.bn : nullptr;
    acts.z.push_back(block_forward(block, acts.z.back(), mode, nullptr, upd));
  }
  return acts;
}

inline Activations forward(const Network& net, const Matrix& x, Mode mode = Mode::eval) {
  Activations acts;
  acts.z.reserve(net.depth() + 1);
  acts.z.push_back(x);
  for (const auto& block : net.blocks)
    acts.z.push_back(block_forward(block, acts.z.back(), mode));
  return acts;
}

/// Eval-mode forward keeping only the final representation.
inline Matrix forward_last(const Network& net, const Matrix& x) {
  Matrix z = x;
  for (const auto& block : net.blocks) z = block_forward(block, z, Mode::eval);
  return z;
}

/// Parameter gradients of one block.
struct BlockGrads {
  Matrix dw, db;
  Matrix dgamma, dbeta;  // present iff the block has batch norm
  bool has_bn = false;
};

namespace detail {

// Backward through one block given its forward trace. Fills `grads`; when
// dx is non-null also produces the gradient w.r.t. the block input
// (needed only by full backpropagation, never by the layer-local path).
inline void block_backward(const Block& block, const Matrix& x, const BlockTrace& trace,
                           const Matrix& dl_dz, BlockGrads& grads, Matrix* dx) {
  const std::size_t m = x.rows();
  const std::size_t d = block.dense.out_dim();
  if (dl_dz.rows() != m || dl_dz.cols() != d)
    throw dimension_error("block gradients: dL/dz shape mismatch");

  // Activation.
  Matrix du = dl_dz;
  switch (block.act) {
    case Activation::relu:
      for (std::size_t i = 0; i < du.size(); ++i)
        if (trace.affine.values()[i] <= 0.0) du.data()[i] = 0.0;
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < du.size(); ++i) {
        const double t = trace.out.values()[i];
        du.data()[i] *= (1.0 - t * t);
      }
      break;
    case Activation::identity:
      break;
  }

  // Batch norm, exact through the batch mean and variance.
  Matrix da;
  if (block.bn) {
    const BatchNorm& bn = *block.bn;
    grads.has_bn = true;
    grads.dgamma = Matrix(1, d);
    grads.dbeta = Matrix(1, d);
    Matrix dh(m, d);
    for (std::size_t j = 0; j < d; ++j) {
      double dg = 0.0, db_ = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        dg += du(i, j) * trace.normalized(i, j);
        db_ += du(i, j);
      }
      grads.dgamma(0, j) = dg;
      grads.dbeta(0, j) = db_;
      for (std::size_t i = 0; i < m; ++i) dh(i, j) = du(i, j) * bn.gamma(0, j);
    }
    da = Matrix(m, d);
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t j = 0; j < d; ++j) {
      double sum_dh = 0.0, sum_dh_h = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        sum_dh += dh(i, j);
        sum_dh_h += dh(i, j) * trace.normalized(i, j);
      }
      const double s = trace.inv_std(0, j);
      for (std::size_t i = 0; i < m; ++i)
        da(i, j) = s * (dh(i, j) - inv_m * sum_dh - trace.normalized(i, j) * inv_m * sum_dh_h);
    }
  } else {
    da = std::move(du);
  }

  grads.dw = Matrix(block.dense.in_dim(), d);
  as_eigen(grads.dw).noalias() = as_eigen(x).transpose() * as_eigen(da);
  grads.db = Matrix(1, d);
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += da(i, j);
    grads.db(0, j) = s;
  }
  if (dx) {
    *dx = Matrix(m, block.dense.in_dim());
    as_eigen(*dx).noalias() = as_eigen(da) * as_eigen(block.dense.w).transpose();
  }
}

}  // namespace detail

/// Parameter gradients of a single block for a given gradient dL/dZ at its
/// output, treating the block input as a constant. Touches no other
/// block's parameters by construction. Train-mode batch statistics are
/// mandatory when the block carries batch norm.
inline BlockGrads layer_local_grads(const Block& block, const Matrix& z_prev,
                                    const Matrix& dl_dz, Mode mode) {
  if (mode != Mode::train && block.bn)
    throw dimension_error("layer_local_grads: eval-mode batch norm in a training gradient");
  BlockTrace trace;
  block_forward(block, z_prev, Mode::train, &trace);
  BlockGrads grads;
  detail::block_backward(block, z_prev, trace, dl_dz, grads, nullptr);
  return grads;
}

/// Numerically stable softmax cross-entropy, averaged over the batch.
/// Returns the mean loss and dL/dlogits = (softmax - onehot)/m.
inline double softmax_ce(const Matrix& logits, const Matrix& y_onehot, Matrix* dlogits) {
  const std::size_t m = logits.rows();
  const std::size_t c = logits.cols();
  if (!logits.same_shape(y_onehot))
    throw dimension_error("softmax_ce: logits/one-hot shape mismatch");
  if (dlogits) *dlogits = Matrix(m, c);
  double loss = 0.0;
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = logits(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(logits(i, j) - mx);
    const double log_denom = std::log(denom);
    for (std::size_t j = 0; j < c; ++j) {
      const double logp = logits(i, j) - mx - log_denom;
      loss -= y_onehot(i, j) * logp;
      if (dlogits) (*dlogits)(i, j) = (std::exp(logp) - y_onehot(i, j)) * inv_m;
    }
  }
  return loss * inv_m;
}

/// All parameter gradients of net+head under mean softmax cross-entropy,
/// by exact chain rule. Pure by default; set update_running to advance
/// batch-norm running statistics (one training step's worth).
struct NetGrads {
  std::vector<BlockGrads> blocks;
  Matrix dhead_w, dhead_b;
  double loss = 0.0;
};

inline NetGrads backprop_grads(Network& net, const DenseLayer& head, const Matrix& x,
                               const Matrix& y_onehot, bool update_running = false) {
  if (head.in_dim() != net.output_dim())
    throw dimension_error("backprop_grads: head input does not match network output");
  if (y_onehot.cols() != head.out_dim())
    throw dimension_error("backprop_grads: one-hot width does not match head output");
  if (y_onehot.rows() != x.rows())
    throw dimension_error("backprop_grads: batch and label counts differ");

  const std::size_t depth = net.depth();
  std::vector<BlockTrace> traces(depth);
  std::vector<Matrix> inputs;
  inputs.reserve(depth + 1);
  inputs.push_back(x);
  for (std::size_t i = 0; i < depth; ++i) {
    Block& block = net.blocks[i];
    BatchNorm* upd = (update_running && block.bn) ? &*block.bn : nullptr;
    inputs.push_back(block_forward(block, inputs.back(), Mode::train, &traces[i], upd));
  }

  const Matrix& z_last = inputs.back();
  Matrix logits(z_last.rows(), head.out_dim());
  as_eigen(logits).noalias() = as_eigen(z_last) * as_eigen(head.w);
  for (std::size_t i = 0; i < logits.rows(); ++i)
    for (std::size_t j = 0; j < logits.cols(); ++j) logits(i, j) += head.b(0, j);

  NetGrads grads;
  Matrix dlogits;
  grads.loss = softmax_ce(logits, y_onehot, &dlogits);

  grads.dhead_w = Matrix(head.in_dim(), head.out_dim());
  as_eigen(grads.dhead_w).noalias() = as_eigen(z_last).transpose() * as_eigen(dlogits);
  grads.dhead_b = Matrix(1, head.out_dim());
  for (std::size_t j = 0; j < head.out_dim(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < dlogits.rows(); ++i) s += dlogits(i, j);
    grads.dhead_b(0, j) = s;
  }

  Matrix dz(z_last.rows(), head.in_dim());
  as_eigen(dz).noalias() = as_eigen(dlogits) * as_eigen(head.w).transpose();

  grads.blocks.resize(depth);
  for (std::size_t i = depth; i-- > 0;) {
    Matrix dx;
    detail::block_backward(net.blocks[i], inputs[i], traces[i], dz,
                           grads.blocks[i], i > 0 ? &dx : nullptr);
    if (i > 0) dz = std::move(dx);
  }
  return grads;
}

/// theta <- theta - lr * g, elementwise.
inline void sgd_step(Matrix& param, const Matrix& grad, double lr) {
  if (!param.same_shape(grad))
    throw dimension_error("sgd_step: parameter/gradient shape mismatch");
  if (!(lr > 0.0)) throw dimension_error("sgd_step: learning rate must be positive");
  for (std::size_t i = 0; i < param.size(); ++i) param.data()[i] -= lr * grad.values()[i];
}

inline void sgd_step(Block& block, const BlockGrads& grads, double lr) {
  sgd_step(block.dense.w, grads.dw, lr);
  sgd_step(block.dense.b, grads.db, lr);
  if (block.bn) {
    if (!grads.has_bn)
      throw dimension_error("sgd_step: missing batch-norm gradients for a batch-norm block");
    sgd_step(block.bn->gamma, grads.dgamma, lr);
    sgd_step(block.bn->beta, grads.dbeta, lr);
  }
}

inline void sgd_step(DenseLayer& layer, const Matrix& dw, const Matrix& db, double lr) {
  sgd_step(layer.w, dw, lr);
  sgd_step(layer.b, db, lr);
}

/// Deterministic seed derivation for sub-streams (splitmix64 step).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Uniform init in +-sqrt(6/(d_in+d_out)), zero bias; deterministic per seed.
inline DenseLayer make_dense(std::size_t d_in, std::size_t d_out, std::uint64_t seed) {
  DenseLayer layer;
  layer.w = Matrix(d_in, d_out);
  layer.b = Matrix(1, d_out);
  const double bound = std::sqrt(6.0 / static_cast<double>(d_in + d_out));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (std::size_t i = 0; i < layer.w.size(); ++i) layer.w.data()[i] = dist(rng);
  return layer;
}

/// Builds a feedforward network from a dimension chain
/// (e.g. {784,256,10} -> two blocks). gamma starts at 1, running variance
/// at 1, everything else at 0.
inline Network make_network(const std::vector<std::size_t>& dims, Activation act,
                            bool batchnorm, std::uint64_t seed) {
  if (dims.size() < 2)
    throw dimension_error("make_network: need at least input and output dimensions");
  for (std::size_t d : dims)
    if (d == 0) throw dimension_error("make_network: zero-width layer");
  Network net;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    Block block;
    block.dense = make_dense(dims[i], dims[i + 1], derive_seed(seed, i));
    block.act = act;
    if (batchnorm) {
      BatchNorm bn;
      bn.gamma = Matrix::constant(1, dims[i + 1], 1.0);
      bn.beta = Matrix(1, dims[i + 1]);
      bn.running_mean = Matrix(1, dims[i + 1]);
      bn.running_var = Matrix::constant(1, dims[i + 1], 1.0);
      block.bn = bn;
    }
    net.blocks.push_back(std::move(block));
  }
  return net;
}

}  // namespace hsicbt
