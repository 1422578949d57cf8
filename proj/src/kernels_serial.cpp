#include <algorithm>
#include <cmath>

#include "kernels_detail.hpp"
#include "rclp/error.hpp"
#include "rclp/kernels.hpp"

namespace rclp::kernels {

namespace {

// q = (I - alpha W) p
void apply_shifted(const SparseMatrix& w, double alpha, std::span<const double> p,
                   std::span<double> q) {
  w.multiply(p, q);
  for (std::size_t i = 0; i < p.size(); ++i) q[i] = p[i] - alpha * q[i];
}

double true_residual(const SparseMatrix& w, double alpha, std::span<const double> b,
                     std::span<const double> x, std::vector<double>& r) {
  apply_shifted(w, alpha, x, r);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = b[i] - r[i];
  return norm2(r);
}

}  // namespace

CgColumnResult cg_shifted(const SparseMatrix& w, double alpha, std::span<const double> b,
                          std::span<double> x, const CgOptions& options) {
  const std::size_t n = w.size;
  std::fill(x.begin(), x.end(), 0.0);
  const double b_norm = norm2(b);
  if (b_norm == 0.0) return {0, 0.0};

  std::vector<double> r(b.begin(), b.end());
  std::vector<double> p = r;
  std::vector<double> q(n);
  double rr = dot(r, r);

  for (std::size_t it = 1; it <= options.max_iterations; ++it) {
    apply_shifted(w, alpha, p, q);
    const double step = rr / dot(p, q);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += step * p[i];
      r[i] -= step * q[i];
    }
    double rr_next = dot(r, r);
    if (std::sqrt(rr_next) <= options.tolerance * b_norm) {
      const double rel = true_residual(w, alpha, b, x, r) / b_norm;
      if (rel <= options.tolerance) return {it, rel};
      // Recursive residual drifted; restart the search directions from the true one.
      rr = dot(r, r);
      p = r;
      continue;
    }
    const double beta = rr_next / rr;
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
    rr = rr_next;
  }
  return {options.max_iterations, true_residual(w, alpha, b, x, r) / b_norm};
}

namespace serial {

Matrix gram_nt(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  }
  return out;
}

SparseMatrix topk_similarity(const Matrix& rows, std::size_t k, double gamma) {
  const std::size_t n = rows.rows();
  SparseMatrix a = detail::topk_shell(n, k);
  const Matrix xt = detail::transposed(rows);
  std::vector<double> sims(n);
  std::vector<std::pair<double, std::uint32_t>> best;
  best.reserve(k);
  for (std::size_t i = 0; i < n; ++i) {
    detail::topk_row(xt, i, k, gamma, sims, best, a.col_indices.data() + i * k,
                     a.values.data() + i * k);
  }
  return a;
}

std::vector<CgColumnResult> diffusion_columns(const SparseMatrix& w, std::size_t columns,
                                              double alpha, const CgOptions& options, Matrix& z) {
  const std::size_t n = w.size;
  z = Matrix(n, columns);
  std::vector<CgColumnResult> results(columns);
  std::vector<double> b(n), x(n);
  for (std::size_t c = 0; c < columns; ++c) {
    std::fill(b.begin(), b.end(), 0.0);
    b[c] = 1.0;
    results[c] = cg_shifted(w, alpha, b, x, options);
    for (std::size_t i = 0; i < n; ++i) z(i, c) = x[i];
  }
  return results;
}

Matrix project_rows(const Matrix& basis, const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  std::vector<double> coef(basis.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) detail::project_row(basis, x.row(i), coef, out.row(i));
  return out;
}

}  // namespace serial

}  // namespace rclp::kernels
