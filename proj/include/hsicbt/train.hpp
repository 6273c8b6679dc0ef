#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "hsicbt/data.hpp"
#include "hsicbt/eval.hpp"
#include "hsicbt/hsic.hpp"
#include "hsicbt/metrics.hpp"
#include "hsicbt/nn.hpp"

namespace hsicbt {

/// Hyperparameters shared by the training procedures.
struct TrainConfig {
  double beta = 500.0;
  double lr_hsic = 0.001;
  double lr_format = 0.01;
  double lr_backprop = 0.1;
  std::size_t batch_size = 128;
  std::size_t epochs = 5;
  std::uint64_t seed = 1;
  double sigma = 5.0;
  std::vector<double> sigma_list;  // multi-scale branches
  double epsilon = 1e-5;
  // Reuse the start-of-batch activations for every layer's update instead
  // of refreshing them as earlier layers change within the batch.
  bool stale_activations = false;

  KernelParams kernel_params() const { return KernelParams{sigma, epsilon, true}; }
};

namespace detail {

inline void validate_config(const TrainConfig& cfg) {
  if (cfg.beta < 0.0) throw dimension_error("train: beta must be non-negative");
  if (!(cfg.lr_hsic > 0.0) || !(cfg.lr_format > 0.0) || !(cfg.lr_backprop > 0.0))
    throw dimension_error("train: learning rates must be positive");
  if (cfg.batch_size < 2) throw dimension_error("train: batch size must be at least 2");
  if (!(cfg.sigma > 0.0)) throw dimension_error("train: sigma must be positive");
  if (!(cfg.epsilon > 0.0)) throw dimension_error("train: epsilon must be positive");
}

// Fixed monitoring batch: the first min(512, n) training rows.
struct MonitorSet {
  Matrix x;
  Matrix y_onehot;
  NhsicCache cache_x;
  NhsicCache cache_y;
};

inline MonitorSet make_monitor_set(const Dataset& ds, const KernelParams& params) {
  const std::size_t m = std::min<std::size_t>(512, ds.n());
  MonitorSet mon;
  mon.x = Matrix(m, ds.dim());
  std::vector<int> labels(ds.labels.begin(), ds.labels.begin() + m);
  for (std::size_t i = 0; i < m; ++i)
    std::memcpy(mon.x.row(i), ds.images.row(i), ds.dim() * sizeof(double));
  mon.y_onehot = one_hot(labels, ds.num_classes);
  mon.cache_x = make_nhsic_cache(mon.x, params);
  mon.cache_y = make_nhsic_cache(mon.y_onehot, params);
  return mon;
}

inline std::pair<double, double> monitor_values(const Matrix& z_mon, const MonitorSet& mon,
                                                const KernelParams& params) {
  const NhsicCache cz = make_nhsic_cache(z_mon, params);
  return {nhsic_value(cz, mon.cache_x), nhsic_value(cz, mon.cache_y)};
}

// Head logits over fixed features.
inline Matrix head_logits(const DenseLayer& head, const Matrix& feats) {
  Matrix logits(feats.rows(), head.out_dim());
  as_eigen(logits).noalias() = as_eigen(feats) * as_eigen(head.w);
  for (std::size_t i = 0; i < logits.rows(); ++i)
    for (std::size_t j = 0; j < logits.cols(); ++j) logits(i, j) += head.b(0, j);
  return logits;
}

inline std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m.cols(); ++j)
      if (m(i, j) > m(i, best)) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

// SGD on a single softmax head over frozen features. Emits one record per
// epoch (plus the initial state) under the given phase label; the nHSIC
// monitors are those of the frozen representation, constant by
// construction.
inline void train_head_on_features(DenseLayer& head, const Matrix& feats,
                                   const std::vector<int>& labels, int num_classes,
                                   const Matrix* test_feats, const std::vector<int>* test_labels,
                                   const TrainConfig& cfg, const MetricsSink& sink,
                                   const std::string& phase, double nhsic_xz, double nhsic_yz) {
  const std::size_t n = feats.rows();
  const Matrix y_all = one_hot(labels, num_classes);

  auto emit = [&](std::size_t epoch) {
    if (!sink) return;
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.phase = phase;
    rec.nhsic_xz = nhsic_xz;
    rec.nhsic_yz = nhsic_yz;
    const Matrix logits = head_logits(head, feats);
    rec.loss = softmax_ce(logits, y_all, nullptr);
    rec.train_acc = accuracy(argmax_rows(logits), labels);
    if (test_feats && test_labels)
      rec.test_acc = accuracy(argmax_rows(head_logits(head, *test_feats)), *test_labels);
    sink(rec);
  };

  emit(0);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (const auto& idx : batch_indices(n, cfg.batch_size, cfg.seed, epoch)) {
      Matrix xb(idx.size(), feats.cols());
      Matrix yb(idx.size(), num_classes);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        std::memcpy(xb.row(i), feats.row(idx[i]), feats.cols() * sizeof(double));
        yb(i, labels[idx[i]]) = 1.0;
      }
      Matrix logits = head_logits(head, xb);
      Matrix dlogits;
      const double loss = softmax_ce(logits, yb, &dlogits);
      if (!std::isfinite(loss))
        throw numerical_error(phase + " training diverged: non-finite loss at epoch " +
                              std::to_string(epoch));
      Matrix dw(head.in_dim(), head.out_dim());
      as_eigen(dw).noalias() = as_eigen(xb).transpose() * as_eigen(dlogits);
      Matrix db(1, head.out_dim());
      for (std::size_t j = 0; j < head.out_dim(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < dlogits.rows(); ++i) s += dlogits(i, j);
        db(0, j) = s;
      }
      sgd_step(head, dw, db, cfg.lr_format);
    }
    emit(epoch);
  }
}

}  // namespace detail

/// nHSIC(X, Z_L) and nHSIC(Y, Z_L) of an activation trace against a fixed
/// monitoring batch. Pure measurement, no state touched.
inline std::pair<double, double> monitor_hsic(const Activations& acts, const Matrix& x,
                                              const Matrix& y_onehot,
                                              const KernelParams& params) {
  const NhsicCache cz = make_nhsic_cache(acts.last(), params);
  const NhsicCache cx = make_nhsic_cache(x, params);
  const NhsicCache cy = make_nhsic_cache(y_onehot, params);
  return {nhsic_value(cz, cx), nhsic_value(cz, cy)};
}

namespace detail {

// One minibatch of Algorithm-style layer-wise updates: ascending layer
// order, gradient of nHSIC(Z_i, X) - beta*nHSIC(Z_i, Y) for the block's
// own parameters, plain SGD step. By default each update is visible to
// later layers within the batch (the stored input activation is refreshed
// after the step); with cfg.stale_activations the start-of-batch
// activations are reused instead.
inline void hsic_update_batch(Network& net, const Batch& batch, const NhsicCache& cx,
                              const NhsicCache& cy, const TrainConfig& cfg,
                              const KernelParams& params) {
  const std::size_t depth = net.depth();
  auto step_block = [&](std::size_t i, const Matrix& z_prev, const BlockTrace& trace) {
    Block& block = net.blocks[i];
    const NhsicCache cz = make_nhsic_cache(trace.out, params);
    const double objective = nhsic_value(cz, cx) - cfg.beta * nhsic_value(cz, cy);
    if (!std::isfinite(objective))
      throw numerical_error("hsic training: non-finite objective (sigma=" +
                            std::to_string(cfg.sigma) + ", beta=" + std::to_string(cfg.beta) +
                            ", layer=" + std::to_string(i + 1) + ")");
    const Matrix gx = nhsic_grad_z(trace.out, cz, cx, params);
    const Matrix gy = nhsic_grad_z(trace.out, cz, cy, params);
    const Matrix dz = sub(gx, scale(gy, cfg.beta));
    BlockGrads grads;
    block_backward(block, z_prev, trace, dz, grads, nullptr);
    sgd_step(block, grads, cfg.lr_hsic);
  };

  if (cfg.stale_activations) {
    std::vector<BlockTrace> traces(depth);
    std::vector<Matrix> inputs;
    inputs.reserve(depth + 1);
    inputs.push_back(batch.x);
    for (std::size_t i = 0; i < depth; ++i) {
      Block& block = net.blocks[i];
      BatchNorm* upd = block.bn ? &*block.bn : nullptr;
      inputs.push_back(block_forward(block, inputs.back(), Mode::train, &traces[i], upd));
    }
    for (std::size_t i = 0; i < depth; ++i) step_block(i, inputs[i], traces[i]);
  } else {
    Matrix z_prev = batch.x;
    for (std::size_t i = 0; i < depth; ++i) {
      Block& block = net.blocks[i];
      BlockTrace trace;
      BatchNorm* upd = block.bn ? &*block.bn : nullptr;
      block_forward(block, z_prev, Mode::train, &trace, upd);
      step_block(i, z_prev, trace);
      if (i + 1 < depth) z_prev = block_forward(block, z_prev, Mode::train);
    }
  }
}

template <typename EmitFn>
inline void hsic_train_epochs(Network& net, const Dataset& train, const TrainConfig& cfg,
                              EmitFn&& emit) {
  const KernelParams params = cfg.kernel_params();
  emit(0);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (const auto& idx : batch_indices(train.n(), cfg.batch_size, cfg.seed, epoch)) {
      const Batch batch = gather_batch(train, idx);
      const NhsicCache cx = make_nhsic_cache(batch.x, params);
      const NhsicCache cy = make_nhsic_cache(batch.y_onehot, params);
      hsic_update_batch(net, batch, cx, cy, cfg, params);
    }
    emit(epoch);
  }
}

}  // namespace detail

/// Layer-wise HSIC-bottleneck training of an arbitrary-width network,
/// emitting only the nHSIC monitors (no classification readout). Used
/// directly when the last layer is not sized to the class count.
inline void hsic_bottleneck_train(Network& net, const Dataset& train, const TrainConfig& cfg,
                                  const MetricsSink& sink,
                                  const std::string& phase = "unformatted") {
  detail::validate_config(cfg);
  const KernelParams params = cfg.kernel_params();
  const detail::MonitorSet mon = detail::make_monitor_set(train, params);
  detail::hsic_train_epochs(net, train, cfg, [&](std::size_t epoch) {
    if (!sink) return;
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.phase = phase;
    const auto [xz, yz] = detail::monitor_values(forward_last(net, mon.x), mon, params);
    rec.nhsic_xz = xz;
    rec.nhsic_yz = yz;
    sink(rec);
  });
}

/// HSIC-bottleneck training with the permutation-classification readout:
/// requires the last layer width to equal the class count; per-epoch
/// metrics use a permutation inferred on the training split.
inline void unformatted_train(Network& net, const Dataset& train, const Dataset* test,
                              const TrainConfig& cfg, const MetricsSink& sink,
                              const std::string& phase = "unformatted") {
  detail::validate_config(cfg);
  if (net.output_dim() != static_cast<std::size_t>(train.num_classes))
    throw dimension_error("unformatted_train: last layer width " +
                          std::to_string(net.output_dim()) + " must equal class count " +
                          std::to_string(train.num_classes));
  const KernelParams params = cfg.kernel_params();
  const detail::MonitorSet mon = detail::make_monitor_set(train, params);

  detail::hsic_train_epochs(net, train, cfg, [&](std::size_t epoch) {
    if (!sink) return;
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.phase = phase;
    const Matrix z_train = forward_last(net, train.images);
    const PermutationMap perm = infer_permutation(z_train, train.labels);
    rec.train_acc = accuracy(classify(z_train, perm), train.labels);
    if (test)
      rec.test_acc = accuracy(classify(forward_last(net, test->images), perm), test->labels);
    const auto [xz, yz] = detail::monitor_values(forward_last(net, mon.x), mon, params);
    rec.nhsic_xz = xz;
    rec.nhsic_yz = yz;
    sink(rec);
  });
}

/// Trains a softmax head on the last-layer representation of a frozen
/// network; the network itself is untouched (taken by const reference,
/// evaluated with running statistics).
inline void format_train(const Network& frozen, DenseLayer& head, const Dataset& train,
                         const Dataset* test, const TrainConfig& cfg, const MetricsSink& sink) {
  detail::validate_config(cfg);
  if (head.in_dim() != frozen.output_dim())
    throw dimension_error("format_train: head input does not match network output");
  if (head.out_dim() != static_cast<std::size_t>(train.num_classes))
    throw dimension_error("format_train: head output must equal class count");
  const KernelParams params = cfg.kernel_params();
  const detail::MonitorSet mon = detail::make_monitor_set(train, params);

  const Matrix feats = forward_last(frozen, train.images);
  Matrix test_feats;
  if (test) test_feats = forward_last(frozen, test->images);

  Matrix z_mon(mon.x.rows(), feats.cols());
  for (std::size_t i = 0; i < z_mon.rows(); ++i)
    std::memcpy(z_mon.row(i), feats.row(i), feats.cols() * sizeof(double));
  const auto [xz, yz] = detail::monitor_values(z_mon, mon, params);

  detail::train_head_on_features(head, feats, train.labels, train.num_classes,
                                 test ? &test_feats : nullptr, test ? &test->labels : nullptr,
                                 cfg, sink, "format", xz, yz);
}

/// Conventional backpropagation baseline: SGD on softmax cross-entropy
/// through net+head, with the nHSIC monitors of Fig.-2 style tracking
/// emitted every epoch.
inline void backprop_train(Network& net, DenseLayer& head, const Dataset& train,
                           const Dataset* test, const TrainConfig& cfg, const MetricsSink& sink) {
  detail::validate_config(cfg);
  if (head.in_dim() != net.output_dim())
    throw dimension_error("backprop_train: head input does not match network output");
  if (head.out_dim() != static_cast<std::size_t>(train.num_classes))
    throw dimension_error("backprop_train: head output must equal class count");
  const KernelParams params = cfg.kernel_params();
  const detail::MonitorSet mon = detail::make_monitor_set(train, params);
  const Matrix y_train = one_hot(train.labels, train.num_classes);

  auto emit = [&](std::size_t epoch) {
    if (!sink) return;
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.phase = "backprop";
    const Matrix z_train = forward_last(net, train.images);
    const Matrix logits = detail::head_logits(head, z_train);
    rec.loss = softmax_ce(logits, y_train, nullptr);
    rec.train_acc = accuracy(detail::argmax_rows(logits), train.labels);
    if (test) {
      const Matrix test_logits = detail::head_logits(head, forward_last(net, test->images));
      rec.test_acc = accuracy(detail::argmax_rows(test_logits), test->labels);
    }
    const auto [xz, yz] = detail::monitor_values(forward_last(net, mon.x), mon, params);
    rec.nhsic_xz = xz;
    rec.nhsic_yz = yz;
    sink(rec);
  };

  emit(0);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (const auto& idx : batch_indices(train.n(), cfg.batch_size, cfg.seed, epoch)) {
      const Batch batch = gather_batch(train, idx);
      NetGrads grads = backprop_grads(net, head, batch.x, batch.y_onehot, true);
      if (!std::isfinite(grads.loss))
        throw numerical_error("backprop_train: loss diverged (non-finite) at epoch " +
                              std::to_string(epoch));
      for (std::size_t i = 0; i < net.depth(); ++i)
        sgd_step(net.blocks[i], grads.blocks[i], cfg.lr_backprop);
      sgd_step(head, grads.dhead_w, grads.dhead_b, cfg.lr_backprop);
    }
    emit(epoch);
  }
}

/// Multi-scale ensemble: one unformatted-trained branch per sigma in
/// cfg.sigma_list (identical architecture and seed), aggregated by the
/// arithmetic mean of the branch last-layer representations, with a single
/// softmax head trained on the mean while the branches stay frozen.
struct MultiscaleModel {
  std::vector<Network> branches;
  std::vector<double> sigmas;
  DenseLayer head;
};

inline Matrix multiscale_features(const MultiscaleModel& model, const Matrix& images) {
  Matrix feats;
  for (const Network& branch : model.branches) {
    Matrix z = forward_last(branch, images);
    if (feats.empty())
      feats = std::move(z);
    else
      feats = add(feats, z);
  }
  return scale(feats, 1.0 / static_cast<double>(model.branches.size()));
}

inline MultiscaleModel multiscale_train(const std::vector<std::size_t>& dims, Activation act,
                                        bool batchnorm, const TrainConfig& cfg,
                                        const Dataset& train, const Dataset* test,
                                        const MetricsSink& sink, bool parallel = false) {
  detail::validate_config(cfg);
  if (cfg.sigma_list.empty())
    throw dimension_error("multiscale_train: sigma_list must be non-empty");
  for (std::size_t i = 0; i < cfg.sigma_list.size(); ++i)
    for (std::size_t j = i + 1; j < cfg.sigma_list.size(); ++j)
      if (cfg.sigma_list[i] == cfg.sigma_list[j])
        throw dimension_error("multiscale_train: sigma values must be distinct");

  MultiscaleModel model;
  model.sigmas = cfg.sigma_list;
  const std::size_t branches = cfg.sigma_list.size();
  model.branches.reserve(branches);
  for (std::size_t j = 0; j < branches; ++j)
    model.branches.push_back(make_network(dims, act, batchnorm, cfg.seed));

  std::vector<std::vector<MetricsRecord>> branch_records(branches);
  auto run_branch = [&](std::size_t j) {
    TrainConfig branch_cfg = cfg;
    branch_cfg.sigma = cfg.sigma_list[j];
    auto collect = [&branch_records, j](const MetricsRecord& rec) {
      branch_records[j].push_back(rec);
    };
    unformatted_train(model.branches[j], train, test, branch_cfg, collect,
                      "branch" + std::to_string(j));
  };

  if (parallel && branches > 1) {
    std::vector<std::thread> pool;
    pool.reserve(branches);
    for (std::size_t j = 0; j < branches; ++j) pool.emplace_back(run_branch, j);
    for (auto& t : pool) t.join();
  } else {
    for (std::size_t j = 0; j < branches; ++j) run_branch(j);
  }
  if (sink)
    for (const auto& records : branch_records)
      for (const auto& rec : records) sink(rec);

  const Matrix feats = multiscale_features(model, train.images);
  Matrix test_feats;
  if (test) test_feats = multiscale_features(model, test->images);

  const KernelParams params = cfg.kernel_params();
  const detail::MonitorSet mon = detail::make_monitor_set(train, params);
  Matrix z_mon(mon.x.rows(), feats.cols());
  for (std::size_t i = 0; i < z_mon.rows(); ++i)
    std::memcpy(z_mon.row(i), feats.row(i), feats.cols() * sizeof(double));
  const auto [xz, yz] = detail::monitor_values(z_mon, mon, params);

  model.head = make_dense(dims.back(), train.num_classes, derive_seed(cfg.seed, 1));
  detail::train_head_on_features(model.head, feats, train.labels, train.num_classes,
                                 test ? &test_feats : nullptr, test ? &test->labels : nullptr,
                                 cfg, sink, "format", xz, yz);
  return model;
}

}  // namespace hsicbt
