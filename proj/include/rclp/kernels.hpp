#pragma once

// Data-parallel inner loops. `serial` is the reference implementation kept for
// testing and benchmarking; `omp` is what the pipeline calls. Both produce
// bit-identical results for any thread count: work is split by independent
// rows or columns and no floating-point reduction crosses a thread boundary.

#include <cstddef>
#include <vector>

#include "rclp/matrix.hpp"
#include "rclp/sparse.hpp"

namespace rclp::kernels {

struct CgOptions {
  double tolerance = 1e-6;
  std::size_t max_iterations = 200;
};

struct CgColumnResult {
  std::size_t iterations = 0;
  double relative_residual = 0.0;
};

/// Solves (I - alpha W) x = b from a zero initial guess. The returned residual
/// is recomputed from scratch, not the recursive estimate.
CgColumnResult cg_shifted(const SparseMatrix& w, double alpha, std::span<const double> b,
                          std::span<double> x, const CgOptions& options);

namespace serial {

/// a * b^T: out(i, j) = a.row(i) . b.row(j)
Matrix gram_nt(const Matrix& a, const Matrix& b);

/// Per row, the k largest similarities to other rows (self excluded), ties to the
/// lower column; values below zero clamped to zero after selection, then raised to gamma.
SparseMatrix topk_similarity(const Matrix& rows, std::size_t k, double gamma);

/// Column i of z solves (I - alpha W) z_i = e_i for i < columns.
std::vector<CgColumnResult> diffusion_columns(const SparseMatrix& w, std::size_t columns,
                                              double alpha, const CgOptions& options, Matrix& z);

/// Each row x mapped to basis (basis^T x); basis is d x r. No renormalization.
Matrix project_rows(const Matrix& basis, const Matrix& x);

}  // namespace serial

namespace omp {

Matrix gram_nt(const Matrix& a, const Matrix& b);
SparseMatrix topk_similarity(const Matrix& rows, std::size_t k, double gamma);
std::vector<CgColumnResult> diffusion_columns(const SparseMatrix& w, std::size_t columns,
                                              double alpha, const CgOptions& options, Matrix& z);
Matrix project_rows(const Matrix& basis, const Matrix& x);

}  // namespace omp

}  // namespace rclp::kernels
