#pragma once

#include <filesystem>
#include <string_view>
#include <vector>

#include "rclp/embedstore.hpp"
#include "rclp/matrix.hpp"

namespace rclp {

/// P0: identity. P1: onto the span of the text embeddings. P2: onto that span
/// with its principal direction removed.
enum class ProjectionVariant : std::uint8_t { kP0 = 0, kP1 = 1, kP2 = 2 };

ProjectionVariant parse_variant(std::string_view name);
std::string_view variant_name(ProjectionVariant v);

/// Singular values below this fraction of the largest are treated as zero.
inline constexpr double kRankEpsilon = 1e-7;
/// A row whose projection is shorter than this lies outside the span.
inline constexpr double kProjectionFloor = 1e-10;

struct ProjectionBasis {
  Matrix basis;  // d x r, orthonormal columns; empty (d x 0) for P0
  ProjectionVariant variant = ProjectionVariant::kP0;
  std::size_t source_dims = 0;
  std::size_t source_classes = 0;

  /// Dimension of the image of the projection (d for P0).
  std::size_t rank() const noexcept {
    return variant == ProjectionVariant::kP0 ? source_dims : basis.cols();
  }
  /// Column k of the basis as a d-vector.
  std::vector<double> column(std::size_t k) const;

  friend bool operator==(const ProjectionBasis&, const ProjectionBasis&) = default;
};

/// Left singular vectors of the d x m matrix whose columns are `rows`' rows,
/// ordered by descending singular value. One-sided (Hestenes) Jacobi.
struct LeftSingular {
  Matrix vectors;  // d x m; column k pairs with values[k]
  std::vector<double> values;
};
LeftSingular left_singular_vectors(const Matrix& rows);

ProjectionBasis compute_text_basis(const EmbeddingSet& text, ProjectionVariant variant);

/// basis (basis^T x) for each row, without renormalization.
Matrix project_unnormalized(const ProjectionBasis& basis, const Matrix& x);

/// Projects and renormalizes every row. P0 only normalizes.
EmbeddingSet project(const ProjectionBasis& basis, const EmbeddingSet& x);

/// Coordinates of already-projected rows in the basis: basis^T x, an n x rank
/// matrix with the same pairwise dot products as `projected` (up to rounding).
/// P0 returns the rows unchanged.
EmbeddingSet span_coordinates(const ProjectionBasis& basis, const EmbeddingSet& projected);

struct AlignmentStats {
  double mean_text_text_cos = 0.0;
  double mean_intra_class_visual_text_cos = 0.0;
  double mean_inter_class_visual_text_cos = 0.0;
};

/// Rows carrying the unlabeled sentinel are left out of the visual-text means.
AlignmentStats alignment_stats(const EmbeddingSet& visual, const EmbeddingSet& text,
                               const LabelVector& labels);

void save_basis(const ProjectionBasis& basis, const std::filesystem::path& path);
ProjectionBasis load_basis(const std::filesystem::path& path);

}  // namespace rclp
