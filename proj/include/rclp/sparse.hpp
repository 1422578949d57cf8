#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace rclp {

/// Square CSR matrix. Column indices are sorted within each row.
struct SparseMatrix {
  std::size_t size = 0;
  std::vector<std::size_t> row_offsets{0};
  std::vector<std::uint32_t> col_indices;
  std::vector<double> values;
  bool symmetric = false;

  std::size_t nnz() const noexcept { return values.size(); }

  /// y = A x
  void multiply(std::span<const double> x, std::span<double> y) const {
    for (std::size_t i = 0; i < size; ++i) {
      double s = 0.0;
      for (std::size_t p = row_offsets[i]; p < row_offsets[i + 1]; ++p) {
        s += values[p] * x[col_indices[p]];
      }
      y[i] = s;
    }
  }

  /// Value at (r, c), zero when structurally absent.
  double at(std::size_t r, std::size_t c) const;

  friend bool operator==(const SparseMatrix&, const SparseMatrix&) = default;
};

}  // namespace rclp
