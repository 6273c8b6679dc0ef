#pragma once

#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hsicbt/errors.hpp"

namespace hsicbt {

/// One per-epoch row of the training log.
struct MetricsRecord {
  std::size_t epoch = 0;
  std::string phase;  // unformatted | format | backprop | branch<j>
  double nhsic_xz = 0.0;
  double nhsic_yz = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  std::optional<double> loss;
};

using MetricsSink = std::function<void(const MetricsRecord&)>;

namespace detail {
inline std::string format_g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}
}  // namespace detail

/// Writes the metrics CSV: header
/// `epoch,phase,nhsic_xz,nhsic_yz,train_acc,test_acc,loss`, floats with 9
/// significant digits, empty loss field when absent.
inline void write_metrics(const std::vector<MetricsRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  out << "epoch,phase,nhsic_xz,nhsic_yz,train_acc,test_acc,loss\n";
  for (const auto& r : records) {
    out << r.epoch << ',' << r.phase << ',' << detail::format_g9(r.nhsic_xz) << ','
        << detail::format_g9(r.nhsic_yz) << ',' << detail::format_g9(r.train_acc) << ','
        << detail::format_g9(r.test_acc) << ',';
    if (r.loss) out << detail::format_g9(*r.loss);
    out << '\n';
  }
  if (!out) throw io_error("write failure on '" + path + "'");
}

}  // namespace hsicbt
