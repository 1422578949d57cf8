#include "rclp/affinity.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>

#include "rclp/error.hpp"
#include "rclp/kernels.hpp"

namespace rclp {

double SparseMatrix::at(std::size_t r, std::size_t c) const {
  const auto first = col_indices.begin() + static_cast<std::ptrdiff_t>(row_offsets[r]);
  const auto last = col_indices.begin() + static_cast<std::ptrdiff_t>(row_offsets[r + 1]);
  const auto it = std::lower_bound(first, last, static_cast<std::uint32_t>(c));
  if (it == last || *it != c) return 0.0;
  return values[static_cast<std::size_t>(it - col_indices.begin())];
}

SparseMatrix build_topk_affinity(const EmbeddingSet& nodes, std::size_t k, double gamma) {
  const std::size_t n = nodes.rows();
  require(k >= 1 && k < n, ErrorCode::kValidation,
          "k must lie in [1, " + std::to_string(n) + "), got " + std::to_string(k));
  require(gamma > 0.0, ErrorCode::kValidation, "affinity exponent must be positive");
  require(n <= UINT32_MAX, ErrorCode::kValidation, "graph too large");
  return kernels::omp::topk_similarity(nodes.data, k, gamma);
}

namespace {

SparseMatrix transpose(const SparseMatrix& a) {
  const std::size_t n = a.size;
  SparseMatrix t;
  t.size = n;
  t.row_offsets.assign(n + 1, 0);
  for (std::uint32_t c : a.col_indices) ++t.row_offsets[c + 1];
  for (std::size_t i = 0; i < n; ++i) t.row_offsets[i + 1] += t.row_offsets[i];
  t.col_indices.resize(a.nnz());
  t.values.resize(a.nnz());
  std::vector<std::size_t> cursor(t.row_offsets.begin(), t.row_offsets.end() - 1);
  // Rows are visited in order, so each transposed row comes out column-sorted.
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t p = a.row_offsets[r]; p < a.row_offsets[r + 1]; ++p) {
      const std::size_t dst = cursor[a.col_indices[p]]++;
      t.col_indices[dst] = static_cast<std::uint32_t>(r);
      t.values[dst] = a.values[p];
    }
  }
  return t;
}

}  // namespace

SparseMatrix normalize_symmetric(const SparseMatrix& a) {
  validate(a);
  const std::size_t n = a.size;
  const SparseMatrix at = transpose(a);

  // Row-wise merge of A and A^T.
  SparseMatrix s;
  s.size = n;
  s.row_offsets.assign(n + 1, 0);
  s.col_indices.reserve(2 * a.nnz());
  s.values.reserve(2 * a.nnz());
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t p = a.row_offsets[i];
    const std::size_t pe = a.row_offsets[i + 1];
    std::size_t q = at.row_offsets[i];
    const std::size_t qe = at.row_offsets[i + 1];
    while (p < pe || q < qe) {
      std::uint32_t col;
      double v = 0.0;
      if (q >= qe || (p < pe && a.col_indices[p] < at.col_indices[q])) {
        col = a.col_indices[p];
        v = a.values[p++];
      } else if (p >= pe || at.col_indices[q] < a.col_indices[p]) {
        col = at.col_indices[q];
        v = at.values[q++];
      } else {
        col = a.col_indices[p];
        v = a.values[p++] + at.values[q++];
      }
      s.col_indices.push_back(col);
      s.values.push_back(v);
    }
    s.row_offsets[i + 1] = s.col_indices.size();
  }

  std::vector<double> inv_sqrt_degree(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t p = s.row_offsets[i]; p < s.row_offsets[i + 1]; ++p) deg += s.values[p];
    inv_sqrt_degree[i] = 1.0 / std::sqrt(std::max(deg, kDegreeFloor));
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = s.row_offsets[i]; p < s.row_offsets[i + 1]; ++p) {
      // Written as a product of both factors in a fixed order so (i,j) and (j,i) agree bitwise.
      const std::size_t j = s.col_indices[p];
      const double scale = i < j ? inv_sqrt_degree[i] * inv_sqrt_degree[j]
                                 : inv_sqrt_degree[j] * inv_sqrt_degree[i];
      s.values[p] *= scale;
    }
  }
  s.symmetric = true;
  return s;
}

void validate(const SparseMatrix& a) {
  require(a.row_offsets.size() == a.size + 1, ErrorCode::kValidation, "malformed CSR offsets");
  for (std::size_t i = 0; i < a.size; ++i) {
    for (std::size_t p = a.row_offsets[i]; p < a.row_offsets[i + 1]; ++p) {
      if (a.col_indices[p] == i) {
        fail(ErrorCode::kValidation, "self loop at node " + std::to_string(i));
      }
      if (!(a.values[p] >= 0.0)) {
        fail(ErrorCode::kValidation, "negative affinity at (" + std::to_string(i) + ", " +
                                         std::to_string(a.col_indices[p]) + ")");
      }
    }
  }
  if (!a.symmetric) return;
  for (std::size_t i = 0; i < a.size; ++i) {
    for (std::size_t p = a.row_offsets[i]; p < a.row_offsets[i + 1]; ++p) {
      const std::size_t j = a.col_indices[p];
      require(std::abs(a.at(j, i) - a.values[p]) <= 1e-12, ErrorCode::kValidation,
              "matrix flagged symmetric is not");
    }
  }
}

void dump_edges(const SparseMatrix& a, std::ostream& out) {
  out << std::setprecision(17);
  for (std::size_t i = 0; i < a.size; ++i) {
    for (std::size_t p = a.row_offsets[i]; p < a.row_offsets[i + 1]; ++p) {
      out << i << ' ' << a.col_indices[p] << ' ' << a.values[p] << '\n';
    }
  }
}

}  // namespace rclp
