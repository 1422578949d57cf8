#pragma once

// Per-row work units shared by the serial and OpenMP kernels.

#include <algorithm>
#include <cmath>
#include <iterator>
#include <numeric>
#include <utility>
#include <vector>

#include "rclp/matrix.hpp"
#include "rclp/sparse.hpp"

namespace rclp::kernels::detail {

/// Row-major transpose, so one row's similarities to all others can be
/// accumulated with unit stride.
inline Matrix transposed(const Matrix& x) {
  Matrix t(x.cols(), x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t a = 0; a < x.cols(); ++a) t(a, i) = x(i, a);
  }
  return t;
}

/// Writes row i's k kept neighbours into cols/vals (sorted by column). `xt` is
/// the transpose of the node matrix; sims[j] is summed over coordinates in
/// ascending order. Ranking is by similarity, descending, ties to the lower
/// index. `sims` (n entries) and `best` are scratch.
inline void topk_row(const Matrix& xt, std::size_t i, std::size_t k, double gamma,
                     std::vector<double>& sims, std::vector<std::pair<double, std::uint32_t>>& best,
                     std::uint32_t* cols, double* vals) {
  const std::size_t d = xt.rows();
  const std::size_t n = xt.cols();
  std::fill(sims.begin(), sims.end(), 0.0);
  for (std::size_t a = 0; a < d; ++a) {
    const double xa = xt(a, i);
    const double* row = xt.row(a).data();
    double* out = sims.data();
    for (std::size_t j = 0; j < n; ++j) out[j] += xa * row[j];
  }

  best.clear();
  // Candidates arrive in ascending j, so one equal to the current k-th never displaces it.
  for (std::size_t j = 0; j < n; ++j) {
    if (j == i) continue;
    const double s = sims[j];
    if (best.size() == k) {
      if (!(s > best.back().first)) continue;
      best.pop_back();
    }
    auto pos = best.end();
    while (pos != best.begin() && std::prev(pos)->first < s) --pos;
    best.insert(pos, {s, static_cast<std::uint32_t>(j)});
  }
  std::sort(best.begin(), best.end(),
            [](const auto& a, const auto& b) { return a.second < b.second; });
  for (std::size_t p = 0; p < k; ++p) {
    double v = std::max(best[p].first, 0.0);
    if (gamma != 1.0) v = std::pow(v, gamma);
    cols[p] = best[p].second;
    vals[p] = v;
  }
}

inline void project_row(const Matrix& basis, std::span<const double> x, std::vector<double>& coef,
                        std::span<double> out) {
  const std::size_t d = basis.rows();
  const std::size_t r = basis.cols();
  std::fill(coef.begin(), coef.end(), 0.0);
  for (std::size_t a = 0; a < d; ++a) {
    const auto b = basis.row(a);
    for (std::size_t c = 0; c < r; ++c) coef[c] += x[a] * b[c];
  }
  for (std::size_t a = 0; a < d; ++a) {
    const auto b = basis.row(a);
    double s = 0.0;
    for (std::size_t c = 0; c < r; ++c) s += b[c] * coef[c];
    out[a] = s;
  }
}

inline SparseMatrix topk_shell(std::size_t n, std::size_t k) {
  SparseMatrix a;
  a.size = n;
  a.row_offsets.resize(n + 1);
  for (std::size_t i = 0; i <= n; ++i) a.row_offsets[i] = i * k;
  a.col_indices.resize(n * k);
  a.values.resize(n * k);
  return a;
}

}  // namespace rclp::kernels::detail
