#pragma once

#include <ostream>

#include "rclp/embedstore.hpp"
#include "rclp/sparse.hpp"

namespace rclp {

/// Degree floor for isolated nodes in the normalized adjacency.
inline constexpr double kDegreeFloor = 1e-12;

/// Keeps each row's k largest cosine similarities to the other rows. Negative
/// similarities are clamped to zero after selection and the surviving values
/// raised to `gamma` (1 leaves them untouched). Every row keeps exactly k entries.
SparseMatrix build_topk_affinity(const EmbeddingSet& nodes, std::size_t k, double gamma = 1.0);

/// D^{-1/2} (A + A^T) D^{-1/2} with D = diag((A + A^T) 1).
SparseMatrix normalize_symmetric(const SparseMatrix& a);

/// Throws a validation error unless `a` has no self loops, nonnegative values,
/// and (when flagged symmetric) mirrored entries.
void validate(const SparseMatrix& a);

/// One "row col value" line per stored entry.
void dump_edges(const SparseMatrix& a, std::ostream& out);

}  // namespace rclp
