#include <omp.h>

#include <algorithm>

#include "kernels_detail.hpp"
#include "rclp/kernels.hpp"
#include "rclp/parallel.hpp"

namespace rclp {

void set_num_threads(int n) {
  if (n <= 0) n = omp_get_num_procs();
  omp_set_num_threads(n);
}

int num_threads() { return omp_get_max_threads(); }

}  // namespace rclp

namespace rclp::kernels::omp {

namespace {
constexpr std::size_t kTile = 64;
}

Matrix gram_nt(const Matrix& a, const Matrix& b) {
  const std::size_t n = a.rows();
  const std::size_t m = b.rows();
  Matrix out(n, m);
  // Tiles over output rows/cols only; each element's dot product keeps the serial order.
  const std::ptrdiff_t row_tiles = static_cast<std::ptrdiff_t>((n + kTile - 1) / kTile);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t t = 0; t < row_tiles; ++t) {
    const std::size_t i0 = static_cast<std::size_t>(t) * kTile;
    const std::size_t i1 = std::min(n, i0 + kTile);
    for (std::size_t j0 = 0; j0 < m; j0 += kTile) {
      const std::size_t j1 = std::min(m, j0 + kTile);
      for (std::size_t i = i0; i < i1; ++i) {
        const auto ai = a.row(i);
        for (std::size_t j = j0; j < j1; ++j) out(i, j) = dot(ai, b.row(j));
      }
    }
  }
  return out;
}

SparseMatrix topk_similarity(const Matrix& rows, std::size_t k, double gamma) {
  const std::size_t n = rows.rows();
  SparseMatrix a = detail::topk_shell(n, k);
  const Matrix xt = detail::transposed(rows);
#pragma omp parallel
  {
    std::vector<double> sims(n);
    std::vector<std::pair<double, std::uint32_t>> best;
    best.reserve(k);
#pragma omp for schedule(dynamic, 16)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
      const auto row = static_cast<std::size_t>(i);
      detail::topk_row(xt, row, k, gamma, sims, best, a.col_indices.data() + row * k,
                       a.values.data() + row * k);
    }
  }
  return a;
}

std::vector<CgColumnResult> diffusion_columns(const SparseMatrix& w, std::size_t columns,
                                              double alpha, const CgOptions& options, Matrix& z) {
  const std::size_t n = w.size;
  z = Matrix(n, columns);
  std::vector<CgColumnResult> results(columns);
#pragma omp parallel
  {
    std::vector<double> b(n), x(n);
#pragma omp for schedule(dynamic, 1)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(columns); ++c) {
      const auto col = static_cast<std::size_t>(c);
      std::fill(b.begin(), b.end(), 0.0);
      b[col] = 1.0;
      results[col] = cg_shifted(w, alpha, b, x, options);
      for (std::size_t i = 0; i < n; ++i) z(i, col) = x[i];
    }
  }
  return results;
}

Matrix project_rows(const Matrix& basis, const Matrix& x) {
  Matrix out(x.rows(), x.cols());
#pragma omp parallel
  {
    std::vector<double> coef(basis.cols());
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(x.rows()); ++i) {
      const auto row = static_cast<std::size_t>(i);
      detail::project_row(basis, x.row(row), coef, out.row(row));
    }
  }
  return out;
}

}  // namespace rclp::kernels::omp
