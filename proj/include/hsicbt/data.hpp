#pragma once

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hsicbt/matrix.hpp"

namespace hsicbt {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// A labelled dataset: pixel rows scaled to [0,1] plus integer class ids.
struct Dataset {
  Matrix images;            // n x d
  std::vector<int> labels;  // length n, entries in [0, num_classes)
  int num_classes = 0;
  std::size_t n() const { return images.rows(); }
  std::size_t dim() const { return images.cols(); }
};

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) throw io_error("read failure on '" + path + "'");
  return bytes;
}

// Transparent gunzip: IDX distribution files ship gzipped, sniffed by the
// two-byte header.
inline std::vector<unsigned char> maybe_gunzip(std::vector<unsigned char> bytes,
                                               const std::string& path) {
  if (bytes.size() < 2 || bytes[0] != 0x1f || bytes[1] != 0x8b) return bytes;
  z_stream strm{};
  if (inflateInit2(&strm, 15 + 16) != Z_OK)
    throw io_error("zlib init failed for '" + path + "'");
  std::vector<unsigned char> out;
  out.reserve(bytes.size() * 4);
  std::vector<unsigned char> buf(1 << 16);
  strm.next_in = bytes.data();
  strm.avail_in = static_cast<uInt>(bytes.size());
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    strm.next_out = buf.data();
    strm.avail_out = static_cast<uInt>(buf.size());
    rc = inflate(&strm, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&strm);
      throw format_error("corrupt gzip stream in '" + path + "'");
    }
    out.insert(out.end(), buf.data(), buf.data() + (buf.size() - strm.avail_out));
  }
  inflateEnd(&strm);
  return out;
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                               const std::string& path) {
  if (offset + 4 > bytes.size())
    throw format_error("'" + path + "' truncated: header incomplete");
  return (std::uint32_t(bytes[offset]) << 24) | (std::uint32_t(bytes[offset + 1]) << 16) |
         (std::uint32_t(bytes[offset + 2]) << 8) | std::uint32_t(bytes[offset + 3]);
}

inline std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

}  // namespace detail

/// Parses a big-endian IDX image/label file pair (MNIST layout). Pixels
/// are scaled by 1/255. Gzip-compressed files are accepted transparently.
/// Labels must lie in [0, max_classes).
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        int max_classes = 10) {
  auto img_bytes = detail::maybe_gunzip(detail::read_file_bytes(images_path), images_path);
  auto lbl_bytes = detail::maybe_gunzip(detail::read_file_bytes(labels_path), labels_path);

  const std::uint32_t img_magic = detail::read_be32(img_bytes, 0, images_path);
  if (img_magic != kIdxImageMagic)
    throw format_error("'" + images_path + "': expected image magic " +
                       detail::hex32(kIdxImageMagic) + ", found " + detail::hex32(img_magic));
  const std::uint32_t lbl_magic = detail::read_be32(lbl_bytes, 0, labels_path);
  if (lbl_magic != kIdxLabelMagic)
    throw format_error("'" + labels_path + "': expected label magic " +
                       detail::hex32(kIdxLabelMagic) + ", found " + detail::hex32(lbl_magic));

  const std::uint32_t n_img = detail::read_be32(img_bytes, 4, images_path);
  const std::uint32_t rows = detail::read_be32(img_bytes, 8, images_path);
  const std::uint32_t cols = detail::read_be32(img_bytes, 12, images_path);
  const std::uint32_t n_lbl = detail::read_be32(lbl_bytes, 4, labels_path);
  if (n_img != n_lbl)
    throw format_error("image/label count mismatch: " + std::to_string(n_img) + " images in '" +
                       images_path + "' vs " + std::to_string(n_lbl) + " labels in '" +
                       labels_path + "'");

  const std::size_t d = std::size_t(rows) * cols;
  if (img_bytes.size() != 16 + std::size_t(n_img) * d)
    throw format_error("'" + images_path + "' truncated: expected " +
                       std::to_string(16 + std::size_t(n_img) * d) + " bytes, found " +
                       std::to_string(img_bytes.size()));
  if (lbl_bytes.size() != 8 + std::size_t(n_lbl))
    throw format_error("'" + labels_path + "' truncated: expected " +
                       std::to_string(8 + std::size_t(n_lbl)) + " bytes, found " +
                       std::to_string(lbl_bytes.size()));

  Dataset ds;
  ds.images = Matrix(n_img, d);
  for (std::size_t i = 0; i < n_img; ++i)
    for (std::size_t j = 0; j < d; ++j)
      ds.images(i, j) = img_bytes[16 + i * d + j] / 255.0;

  ds.labels.resize(n_lbl);
  for (std::size_t i = 0; i < n_lbl; ++i) {
    const int label = lbl_bytes[8 + i];
    if (label >= max_classes)
      throw data_error("'" + labels_path + "': label " + std::to_string(label) +
                       " outside [0," + std::to_string(max_classes) + ") at index " +
                       std::to_string(i));
    ds.labels[i] = label;
  }
  int max_label = 0;
  for (int l : ds.labels) max_label = std::max(max_label, l);
  ds.num_classes = max_label + 1;
  return ds;
}

/// Writes a dataset back out as an IDX pair (inverse of load_idx for data
/// that originated from bytes). Pixel values are rounded to the nearest
/// 1/255 step. Images must be square unless `rows`/`cols` are given.
inline void write_idx(const Dataset& ds, const std::string& images_path,
                      const std::string& labels_path, std::uint32_t rows = 0,
                      std::uint32_t cols = 0) {
  if (rows == 0 || cols == 0) {
    const auto side = static_cast<std::uint32_t>(std::lround(std::sqrt(double(ds.dim()))));
    if (std::size_t(side) * side != ds.dim())
      throw dimension_error("write_idx: non-square image dimension; pass rows/cols");
    rows = cols = side;
  }
  if (std::size_t(rows) * cols != ds.dim())
    throw dimension_error("write_idx: rows*cols does not match image width");

  auto put_be32 = [](std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };

  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw io_error("cannot open '" + images_path + "' for writing");
  put_be32(img, kIdxImageMagic);
  put_be32(img, static_cast<std::uint32_t>(ds.n()));
  put_be32(img, rows);
  put_be32(img, cols);
  for (std::size_t i = 0; i < ds.n(); ++i)
    for (std::size_t j = 0; j < ds.dim(); ++j) {
      const double v = std::clamp(ds.images(i, j), 0.0, 1.0);
      img.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  if (!img) throw io_error("write failure on '" + images_path + "'");

  std::ofstream lbl(labels_path, std::ios::binary);
  if (!lbl) throw io_error("cannot open '" + labels_path + "' for writing");
  put_be32(lbl, kIdxLabelMagic);
  put_be32(lbl, static_cast<std::uint32_t>(ds.n()));
  for (int l : ds.labels) lbl.put(static_cast<char>(static_cast<unsigned char>(l)));
  if (!lbl) throw io_error("write failure on '" + labels_path + "'");
}

/// One-hot encoding; rows sum to one.
inline Matrix one_hot(const std::vector<int>& labels, int num_classes) {
  Matrix y(labels.size(), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw data_error("one_hot: label " + std::to_string(labels[i]) + " outside [0," +
                       std::to_string(num_classes) + ")");
    y(i, labels[i]) = 1.0;
  }
  return y;
}

namespace detail {
// Fisher-Yates with an explicit draw so the permutation is stable across
// standard library implementations.
inline std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}
}  // namespace detail

/// Shuffled index batches for one epoch; deterministic per (seed, epoch),
/// short remainder dropped.
inline std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t m,
                                                           std::uint64_t seed,
                                                           std::size_t epoch) {
  if (m < 2) throw dimension_error("batches: batch size must be at least 2");
  if (m > n)
    throw dimension_error("batches: batch size " + std::to_string(m) + " exceeds dataset size " +
                          std::to_string(n));
  std::uint64_t mixed = seed;
  mixed ^= 0x9e3779b97f4a7c15ULL + (epoch << 6) + (mixed >> 2) + epoch;
  const auto perm = detail::permutation(n, mixed);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start + m <= n; start += m)
    out.emplace_back(perm.begin() + start, perm.begin() + start + m);
  return out;
}

struct Batch {
  Matrix x;
  Matrix y_onehot;
  std::vector<int> labels;
};

inline Batch gather_batch(const Dataset& ds, const std::vector<std::size_t>& idx) {
  Batch b;
  b.x = Matrix(idx.size(), ds.dim());
  b.labels.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::memcpy(b.x.row(i), ds.images.row(idx[i]), ds.dim() * sizeof(double));
    b.labels[i] = ds.labels[idx[i]];
  }
  b.y_onehot = one_hot(b.labels, ds.num_classes);
  return b;
}

/// Minibatch sequence for one epoch.
inline std::vector<Batch> batches(const Dataset& ds, std::size_t m, std::uint64_t seed,
                                  std::size_t epoch) {
  std::vector<Batch> out;
  for (const auto& idx : batch_indices(ds.n(), m, seed, epoch))
    out.push_back(gather_batch(ds, idx));
  return out;
}

/// Gaussian class clusters, one center per class on scaled coordinate axes.
inline Dataset synthetic_blobs(std::size_t n, std::size_t d, int classes, double separation,
                               double spread, std::uint64_t seed) {
  if (n < 2) throw dimension_error("synthetic_blobs: need n >= 2");
  Dataset ds;
  ds.images = Matrix(n, d);
  ds.labels.resize(n);
  ds.num_classes = classes;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, spread);
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % classes);
    ds.labels[i] = cls;
    for (std::size_t j = 0; j < d; ++j) {
      const double center = (j % classes == static_cast<std::size_t>(cls)) ? separation : 0.0;
      ds.images(i, j) = center + noise(rng);
    }
  }
  return ds;
}

/// Two independent standard-normal matrices.
inline std::pair<Matrix, Matrix> synthetic_independent_pair(std::size_t n, std::size_t d,
                                                            std::uint64_t seed) {
  if (n < 2) throw dimension_error("synthetic_independent_pair: need n >= 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix a(n, d), b(n, d);
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] = gauss(rng);
  for (std::size_t i = 0; i < b.size(); ++i) b.data()[i] = gauss(rng);
  return {std::move(a), std::move(b)};
}

/// (Z, Z + noise) pair; noise 0 gives identical matrices.
inline std::pair<Matrix, Matrix> synthetic_dependent_pair(std::size_t n, std::size_t d,
                                                          double noise, std::uint64_t seed) {
  if (n < 2) throw dimension_error("synthetic_dependent_pair: need n >= 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix a(n, d);
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] = gauss(rng);
  Matrix b = a;
  if (noise > 0.0) {
    std::normal_distribution<double> jitter(0.0, noise);
    for (std::size_t i = 0; i < b.size(); ++i) b.data()[i] += jitter(rng);
  }
  return {std::move(a), std::move(b)};
}

namespace detail {
// 7x5 digit glyphs, row-major bit strings.
inline const char* digit_glyph(int digit) {
  static const char* glyphs[10] = {
      "01110" "10001" "10011" "10101" "11001" "10001" "01110",  // 0
      "00100" "01100" "00100" "00100" "00100" "00100" "01110",  // 1
      "01110" "10001" "00001" "00010" "00100" "01000" "11111",  // 2
      "11111" "00010" "00100" "00010" "00001" "10001" "01110",  // 3
      "00010" "00110" "01010" "10010" "11111" "00010" "00010",  // 4
      "11111" "10000" "11110" "00001" "00001" "10001" "01110",  // 5
      "00110" "01000" "10000" "11110" "10001" "10001" "01110",  // 6
      "11111" "00001" "00010" "00100" "01000" "01000" "01000",  // 7
      "01110" "10001" "10001" "01110" "10001" "10001" "01110",  // 8
      "01110" "10001" "10001" "01111" "00001" "00010" "01100",  // 9
  };
  return glyphs[digit];
}
}  // namespace detail

/// Deterministic 28x28 ten-class digit images: upscaled glyph bitmaps with
/// per-sample translation, intensity jitter, box blur, and pixel noise.
/// A stand-in with MNIST's exact shape for desk-scale experiments when the
/// real IDX files are not on disk.
inline Dataset synthetic_digits(std::size_t n, std::uint64_t seed) {
  constexpr int side = 28;
  constexpr int scale = 3;  // glyph cell -> 3x3 pixels, 21x15 footprint
  Dataset ds;
  ds.images = Matrix(n, side * side);
  ds.labels.resize(n);
  ds.num_classes = 10;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> shift(-3, 3);
  std::uniform_real_distribution<double> intensity(0.6, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> pixel_noise(0.0, 0.12);

  std::vector<double> canvas(side * side);
  for (std::size_t i = 0; i < n; ++i) {
    const int digit = static_cast<int>(rng() % 10);
    ds.labels[i] = digit;
    std::fill(canvas.begin(), canvas.end(), 0.0);
    const char* glyph = detail::digit_glyph(digit);
    const double level = intensity(rng);
    const int dx = 6 + shift(rng);
    const int dy = 3 + shift(rng);
    for (int gr = 0; gr < 7; ++gr)
      for (int gc = 0; gc < 5; ++gc) {
        if (glyph[gr * 5 + gc] != '1') continue;
        for (int pr = 0; pr < scale; ++pr)
          for (int pc = 0; pc < scale; ++pc) {
            const int r = dy + gr * scale + pr;
            const int c = dx + gc * scale + pc;
            if (r >= 0 && r < side && c >= 0 && c < side) canvas[r * side + c] = level;
          }
      }
    // Light box blur on roughly half the samples softens stroke edges.
    if (unit(rng) < 0.5) {
      std::vector<double> blurred(canvas);
      for (int r = 1; r + 1 < side; ++r)
        for (int c = 1; c + 1 < side; ++c) {
          double s = 0.0;
          for (int rr = -1; rr <= 1; ++rr)
            for (int cc = -1; cc <= 1; ++cc) s += canvas[(r + rr) * side + (c + cc)];
          blurred[r * side + c] = s / 9.0;
        }
      canvas.swap(blurred);
    }
    for (int p = 0; p < side * side; ++p) {
      const double v = canvas[p] + pixel_noise(rng);
      ds.images(i, p) = std::clamp(v, 0.0, 1.0);
    }
  }
  return ds;
}

}  // namespace hsicbt
