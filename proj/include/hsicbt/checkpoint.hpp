#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "hsicbt/eval.hpp"
#include "hsicbt/nn.hpp"

namespace hsicbt {

/// On-disk model container. Layout (all integers and reals little-endian):
///   8 bytes   magic "HSICNET1"
///   u32       network count (1, or one per multi-scale branch)
///   per network:
///     u32     block count
///     per block: u32 d_in, u32 d_out, u8 has_bn, u8 activation(0=relu,1=tanh,2=identity)
///     per block, f64 arrays in declared order:
///       W (d_in*d_out row-major), b (d_out),
///       then if has_bn: gamma, beta, running_mean, running_var (d_out each),
///       momentum, bn_eps
///   u8 has_head;  if set: u32 d_in, u32 d_out, W, b
///   u8 has_perm;  if set: u32 c, then c u32 output indices (entry k = class k)
struct ModelFile {
  std::vector<Network> nets;
  std::optional<DenseLayer> head;
  std::optional<PermutationMap> permutation;
};

namespace detail {

constexpr char kModelMagic[8] = {'H', 'S', 'I', 'C', 'N', 'E', 'T', '1'};

inline void put_u8(std::ofstream& out, std::uint8_t v) {
  out.put(static_cast<char>(v));
}
inline void put_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_f64(std::ofstream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}
inline void put_matrix(std::ofstream& out, const Matrix& m) {
  for (double v : m.values()) put_f64(out, v);
}

struct Reader {
  std::ifstream in;
  std::string path;
  explicit Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
    if (!in) throw io_error("cannot open '" + p + "'");
  }
  void raw(void* dst, std::size_t len) {
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(len));
    if (in.gcount() != static_cast<std::streamsize>(len))
      throw format_error("'" + path + "' truncated");
  }
  std::uint8_t u8() {
    std::uint8_t v;
    raw(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    unsigned char b[4];
    raw(b, 4);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
  }
  double f64() {
    unsigned char b[8];
    raw(b, 8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t(b[i]) << (8 * i);
    return std::bit_cast<double>(bits);
  }
  Matrix matrix(std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = f64();
    return m;
  }
};

}  // namespace detail

inline void save_model(const ModelFile& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  out.write(detail::kModelMagic, 8);
  detail::put_u32(out, static_cast<std::uint32_t>(model.nets.size()));
  for (const Network& net : model.nets) {
    detail::put_u32(out, static_cast<std::uint32_t>(net.depth()));
    for (const Block& block : net.blocks) {
      detail::put_u32(out, static_cast<std::uint32_t>(block.dense.in_dim()));
      detail::put_u32(out, static_cast<std::uint32_t>(block.dense.out_dim()));
      detail::put_u8(out, block.bn ? 1 : 0);
      detail::put_u8(out, static_cast<std::uint8_t>(block.act));
    }
    for (const Block& block : net.blocks) {
      detail::put_matrix(out, block.dense.w);
      detail::put_matrix(out, block.dense.b);
      if (block.bn) {
        detail::put_matrix(out, block.bn->gamma);
        detail::put_matrix(out, block.bn->beta);
        detail::put_matrix(out, block.bn->running_mean);
        detail::put_matrix(out, block.bn->running_var);
        detail::put_f64(out, block.bn->momentum);
        detail::put_f64(out, block.bn->bn_eps);
      }
    }
  }
  detail::put_u8(out, model.head ? 1 : 0);
  if (model.head) {
    detail::put_u32(out, static_cast<std::uint32_t>(model.head->in_dim()));
    detail::put_u32(out, static_cast<std::uint32_t>(model.head->out_dim()));
    detail::put_matrix(out, model.head->w);
    detail::put_matrix(out, model.head->b);
  }
  detail::put_u8(out, model.permutation ? 1 : 0);
  if (model.permutation) {
    detail::put_u32(out, static_cast<std::uint32_t>(model.permutation->class_to_output.size()));
    for (int o : model.permutation->class_to_output)
      detail::put_u32(out, static_cast<std::uint32_t>(o));
  }
  if (!out) throw io_error("write failure on '" + path + "'");
}

inline ModelFile load_model(const std::string& path) {
  detail::Reader r(path);
  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, detail::kModelMagic, 8) != 0)
    throw format_error("'" + path + "': expected magic \"HSICNET1\", found \"" +
                       std::string(magic, 8) + "\"");
  ModelFile model;
  const std::uint32_t net_count = r.u32();
  if (net_count == 0 || net_count > 64)
    throw format_error("'" + path + "': implausible network count " + std::to_string(net_count));
  for (std::uint32_t ni = 0; ni < net_count; ++ni) {
    Network net;
    const std::uint32_t block_count = r.u32();
    if (block_count == 0 || block_count > 4096)
      throw format_error("'" + path + "': implausible block count " + std::to_string(block_count));
    struct Spec {
      std::uint32_t d_in, d_out;
      bool has_bn;
      std::uint8_t act;
    };
    std::vector<Spec> specs(block_count);
    for (auto& s : specs) {
      s.d_in = r.u32();
      s.d_out = r.u32();
      s.has_bn = r.u8() != 0;
      s.act = r.u8();
      if (s.act > 2) throw format_error("'" + path + "': unknown activation id");
    }
    for (const auto& s : specs) {
      Block block;
      block.dense.w = r.matrix(s.d_in, s.d_out);
      block.dense.b = r.matrix(1, s.d_out);
      block.act = static_cast<Activation>(s.act);
      if (s.has_bn) {
        BatchNorm bn;
        bn.gamma = r.matrix(1, s.d_out);
        bn.beta = r.matrix(1, s.d_out);
        bn.running_mean = r.matrix(1, s.d_out);
        bn.running_var = r.matrix(1, s.d_out);
        bn.momentum = r.f64();
        bn.bn_eps = r.f64();
        block.bn = std::move(bn);
      }
      net.blocks.push_back(std::move(block));
    }
    model.nets.push_back(std::move(net));
  }
  if (r.u8()) {
    DenseLayer head;
    const std::uint32_t d_in = r.u32();
    const std::uint32_t d_out = r.u32();
    head.w = r.matrix(d_in, d_out);
    head.b = r.matrix(1, d_out);
    model.head = std::move(head);
  }
  if (r.u8()) {
    PermutationMap perm;
    const std::uint32_t c = r.u32();
    perm.class_to_output.resize(c);
    for (std::uint32_t i = 0; i < c; ++i) perm.class_to_output[i] = static_cast<int>(r.u32());
    if (!perm.is_bijection())
      throw format_error("'" + path + "': stored permutation is not a bijection");
    model.permutation = std::move(perm);
  }
  return model;
}

}  // namespace hsicbt
