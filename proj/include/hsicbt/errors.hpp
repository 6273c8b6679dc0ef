#pragma once

#include <stdexcept>
#include <string>

namespace hsicbt {

/// Shape or configuration mismatch (wrong dimensions, invalid arguments).
struct dimension_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Bad values in the data itself (non-finite entries, out-of-range labels).
struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Numerical failure during a computation. For factorization failures
/// `pivot` holds the zero-based index of the offending pivot, else -1.
struct numerical_error : std::runtime_error {
  int pivot = -1;
  explicit numerical_error(const std::string& msg, int pivot_index = -1)
      : std::runtime_error(msg), pivot(pivot_index) {}
};

/// Malformed file contents (wrong magic, truncation, inconsistent counts).
struct format_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Filesystem-level failure; message always names the path involved.
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace hsicbt
