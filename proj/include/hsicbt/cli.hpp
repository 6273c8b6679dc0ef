#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hsicbt/checkpoint.hpp"
#include "hsicbt/train.hpp"

namespace hsicbt {

/// Everything one experiment run needs; assembled from flags, config file,
/// and defaults (flags win, then the config file, then defaults).
struct RunSpec {
  std::string command;
  std::string dataset_dir;
  std::string images, labels, test_images, test_labels;
  std::string arch = "784-256-256-256-256-256-10";
  std::string activation = "relu";
  std::string sigma_list;
  bool no_batchnorm = false;
  bool branch_parallel = false;
  bool stale_activations = false;
  double lr = 0.0;  // 0 = per-command default
  std::string outdir;
  TrainConfig cfg;
};

/// "784-256-10" -> {784, 256, 10}; at least two strictly positive parts.
inline std::vector<std::size_t> parse_arch(const std::string& arch) {
  std::vector<std::size_t> dims;
  std::stringstream ss(arch);
  std::string part;
  while (std::getline(ss, part, '-')) {
    if (part.empty()) throw dimension_error("bad architecture '" + arch + "': empty segment");
    for (char c : part)
      if (!std::isdigit(static_cast<unsigned char>(c)))
        throw dimension_error("bad architecture '" + arch + "': non-numeric segment '" + part + "'");
    const long v = std::stol(part);
    if (v <= 0) throw dimension_error("bad architecture '" + arch + "': layer width must be positive");
    dims.push_back(static_cast<std::size_t>(v));
  }
  if (dims.size() < 2)
    throw dimension_error("bad architecture '" + arch + "': need at least input and output widths");
  return dims;
}

/// "1,5,10" -> {1, 5, 10}.
inline std::vector<double> parse_sigma_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    std::size_t used = 0;
    const double v = std::stod(part, &used);
    if (used != part.size() || !(v > 0.0))
      throw dimension_error("bad sigma list '" + text + "': entry '" + part + "'");
    out.push_back(v);
  }
  if (out.empty()) throw dimension_error("bad sigma list '" + text + "': no values");
  return out;
}

namespace cli_detail {

inline std::string fmt_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string probe_gz(const std::string& base) {
  namespace fs = std::filesystem;
  if (fs::exists(base)) return base;
  if (fs::exists(base + ".gz")) return base + ".gz";
  return base;  // let the loader report the missing path
}

// The per-command learning rate the --lr flag overrides.
inline void apply_lr(RunSpec& spec) {
  if (spec.lr <= 0.0) return;
  if (spec.command == "train-unformatted" || spec.command == "train-multiscale" ||
      spec.command == "toy-1d")
    spec.cfg.lr_hsic = spec.lr;
  else if (spec.command == "train-format")
    spec.cfg.lr_format = spec.lr;
  else
    spec.cfg.lr_backprop = spec.lr;
}

inline void resolve_dataset_paths(RunSpec& spec) {
  if (!spec.dataset_dir.empty()) {
    if (spec.images.empty())
      spec.images = probe_gz(spec.dataset_dir + "/train-images-idx3-ubyte");
    if (spec.labels.empty())
      spec.labels = probe_gz(spec.dataset_dir + "/train-labels-idx1-ubyte");
    if (spec.test_images.empty())
      spec.test_images = probe_gz(spec.dataset_dir + "/t10k-images-idx3-ubyte");
    if (spec.test_labels.empty())
      spec.test_labels = probe_gz(spec.dataset_dir + "/t10k-labels-idx1-ubyte");
  }
  if (spec.images.empty() || spec.labels.empty())
    throw dimension_error("no training data: pass --dataset or --images/--labels");
}

inline void write_effective_config(const RunSpec& spec, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  out << "# effective configuration (command: " << spec.command << ")\n";
  auto kv = [&](const char* key, const std::string& value) {
    if (!value.empty()) out << key << " = " << value << "\n";
  };
  kv("arch", spec.arch);
  kv("dataset", spec.dataset_dir);
  kv("images", spec.images);
  kv("labels", spec.labels);
  kv("test-images", spec.test_images);
  kv("test-labels", spec.test_labels);
  kv("beta", fmt_full(spec.cfg.beta));
  kv("sigma", fmt_full(spec.cfg.sigma));
  kv("sigma-list", spec.sigma_list);
  kv("epsilon", fmt_full(spec.cfg.epsilon));
  kv("lr", fmt_full(spec.lr > 0.0 ? spec.lr
                    : (spec.command == "train-format"     ? spec.cfg.lr_format
                       : spec.command == "train-backprop" || spec.command == "monitor"
                           ? spec.cfg.lr_backprop
                           : spec.cfg.lr_hsic)));
  kv("batch-size", std::to_string(spec.cfg.batch_size));
  kv("epochs", std::to_string(spec.cfg.epochs));
  kv("seed", std::to_string(spec.cfg.seed));
  kv("outdir", spec.outdir);
  kv("activation", spec.activation);
  out << "no-batchnorm = " << (spec.no_batchnorm ? "true" : "false") << "\n";
  out << "branch-parallel = " << (spec.branch_parallel ? "true" : "false") << "\n";
  out << "stale-activations = " << (spec.stale_activations ? "true" : "false") << "\n";
  if (!out) throw io_error("write failure on '" + path + "'");
}

inline void write_permutation(const PermutationMap& perm, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  for (int o : perm.class_to_output) out << o << "\n";
  if (!out) throw io_error("write failure on '" + path + "'");
}

// 50 uniform bins over the observed range of the single activation
// column, one count column per class.
inline void write_histogram_1d(const Matrix& z, const std::vector<int>& labels, int num_classes,
                               const std::string& path) {
  constexpr int kBins = 50;
  double lo = z(0, 0), hi = z(0, 0);
  for (double v : z.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi <= lo) hi = lo + 1e-12;
  const double width = (hi - lo) / kBins;
  std::vector<std::vector<int>> counts(kBins, std::vector<int>(num_classes, 0));
  for (std::size_t i = 0; i < z.rows(); ++i) {
    int bin = static_cast<int>((z(i, 0) - lo) / width);
    bin = std::clamp(bin, 0, kBins - 1);
    ++counts[bin][labels[i]];
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  out << "bin_lo,bin_hi";
  for (int k = 0; k < num_classes; ++k) out << ",class" << k;
  out << "\n";
  for (int b = 0; b < kBins; ++b) {
    out << detail::format_g9(lo + b * width) << ',' << detail::format_g9(lo + (b + 1) * width);
    for (int k = 0; k < num_classes; ++k) out << ',' << counts[b][k];
    out << "\n";
  }
  if (!out) throw io_error("write failure on '" + path + "'");
}

}  // namespace cli_detail

/// Executes one parsed run: loads data, trains per the command, writes
/// metrics.csv / config.txt / model.bin (and permutation.txt where a
/// permutation exists) into the output directory. Returns the process
/// exit code.
inline int run(RunSpec spec) {
  namespace fs = std::filesystem;
  cli_detail::apply_lr(spec);
  if (spec.outdir.empty()) throw dimension_error("--outdir is required");
  fs::create_directories(spec.outdir);
  const std::string outdir = spec.outdir;

  // toy-1d defaults to the single-output architecture with tanh.
  std::vector<std::size_t> dims = parse_arch(spec.arch);
  const Activation act = activation_from_string(spec.activation);
  const bool batchnorm = !spec.no_batchnorm;
  spec.cfg.stale_activations = spec.stale_activations;
  if (!spec.sigma_list.empty()) spec.cfg.sigma_list = parse_sigma_list(spec.sigma_list);

  cli_detail::write_effective_config(spec, outdir + "/config.txt");

  cli_detail::resolve_dataset_paths(spec);
  const Dataset train = load_idx(spec.images, spec.labels);
  std::optional<Dataset> test;
  if (!spec.test_images.empty() && !spec.test_labels.empty() &&
      fs::exists(spec.test_images) && fs::exists(spec.test_labels))
    test = load_idx(spec.test_images, spec.test_labels);

  if (dims.front() != train.dim())
    throw dimension_error("architecture input width " + std::to_string(dims.front()) +
                          " does not match data dimension " + std::to_string(train.dim()));

  std::vector<MetricsRecord> records;
  auto sink = [&](const MetricsRecord& r) { records.push_back(r); };
  const Dataset* test_ptr = test ? &*test : nullptr;

  if (spec.command == "train-unformatted") {
    Network net = make_network(dims, act, batchnorm, spec.cfg.seed);
    unformatted_train(net, train, test_ptr, spec.cfg, sink);
    const PermutationMap perm = infer_permutation(forward_last(net, train.images), train.labels);
    ModelFile model;
    model.nets.push_back(std::move(net));
    model.permutation = perm;
    save_model(model, outdir + "/model.bin");
    cli_detail::write_permutation(perm, outdir + "/permutation.txt");
  } else if (spec.command == "train-format") {
    ModelFile model = load_model(outdir + "/model.bin");
    if (model.nets.size() != 1)
      throw dimension_error("train-format expects a single-network checkpoint; use "
                            "train-multiscale for ensembles");
    const Network& frozen = model.nets[0];
    DenseLayer head =
        make_dense(frozen.output_dim(), train.num_classes, derive_seed(spec.cfg.seed, 1));
    format_train(frozen, head, train, test_ptr, spec.cfg, sink);
    model.head = std::move(head);
    save_model(model, outdir + "/model.bin");
  } else if (spec.command == "train-backprop" || spec.command == "monitor") {
    Network net = make_network(dims, act, batchnorm, spec.cfg.seed);
    DenseLayer head =
        make_dense(net.output_dim(), train.num_classes, derive_seed(spec.cfg.seed, 1));
    backprop_train(net, head, train, test_ptr, spec.cfg, sink);
    ModelFile model;
    model.nets.push_back(std::move(net));
    model.head = std::move(head);
    save_model(model, outdir + "/model.bin");
  } else if (spec.command == "train-multiscale") {
    if (spec.cfg.sigma_list.empty())
      throw dimension_error("train-multiscale needs --sigma-list");
    MultiscaleModel ms = multiscale_train(dims, act, batchnorm, spec.cfg, train, test_ptr, sink,
                                          spec.branch_parallel);
    ModelFile model;
    model.nets = std::move(ms.branches);
    model.head = std::move(ms.head);
    save_model(model, outdir + "/model.bin");
  } else if (spec.command == "toy-1d") {
    // Single-output HSIC-trained representation next to a backprop
    // counterpart with an appended classification head; per-class
    // activation histograms of both go out as CSV.
    Network hsic_net = make_network(dims, act, batchnorm, spec.cfg.seed);
    hsic_bottleneck_train(hsic_net, train, spec.cfg, sink);
    cli_detail::write_histogram_1d(forward_last(hsic_net, train.images), train.labels,
                                   train.num_classes, outdir + "/toy1d_hist_unformatted.csv");

    Network bp_net = make_network(dims, act, batchnorm, spec.cfg.seed);
    DenseLayer head =
        make_dense(bp_net.output_dim(), train.num_classes, derive_seed(spec.cfg.seed, 1));
    backprop_train(bp_net, head, train, test_ptr, spec.cfg, sink);
    cli_detail::write_histogram_1d(forward_last(bp_net, train.images), train.labels,
                                   train.num_classes, outdir + "/toy1d_hist_backprop.csv");

    ModelFile model;
    model.nets.push_back(std::move(hsic_net));
    save_model(model, outdir + "/model.bin");
  } else {
    throw dimension_error("unknown command '" + spec.command + "'");
  }

  write_metrics(records, outdir + "/metrics.csv");
  return 0;
}

}  // namespace hsicbt
