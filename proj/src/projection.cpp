#include "rclp/projection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rclp/error.hpp"
#include "rclp/kernels.hpp"

namespace rclp {

ProjectionVariant parse_variant(std::string_view name) {
  if (name == "P0" || name == "p0") return ProjectionVariant::kP0;
  if (name == "P1" || name == "p1") return ProjectionVariant::kP1;
  if (name == "P2" || name == "p2") return ProjectionVariant::kP2;
  fail(ErrorCode::kValidation, "unknown projection variant '" + std::string(name) + "'");
}

std::string_view variant_name(ProjectionVariant v) {
  switch (v) {
    case ProjectionVariant::kP0: return "P0";
    case ProjectionVariant::kP1: return "P1";
    case ProjectionVariant::kP2: return "P2";
  }
  return "?";
}

std::vector<double> ProjectionBasis::column(std::size_t k) const {
  std::vector<double> c(basis.rows());
  for (std::size_t a = 0; a < basis.rows(); ++a) c[a] = basis(a, k);
  return c;
}

LeftSingular left_singular_vectors(const Matrix& rows) {
  const std::size_t m = rows.rows();
  const std::size_t d = rows.cols();
  Matrix cols = rows;  // row i of `cols` is column i of the d x m matrix

  constexpr double kOrthTol = 1e-15;
  constexpr int kMaxSweeps = 80;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < m; ++p) {
      for (std::size_t q = p + 1; q < m; ++q) {
        auto cp = cols.row(p);
        auto cq = cols.row(q);
        const double alpha = dot(cp, cp);
        const double beta = dot(cq, cq);
        const double gamma = dot(cp, cq);
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= kOrthTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t k = 0; k < d; ++k) {
          const double xp = cp[k];
          const double xq = cq[k];
          cp[k] = c * xp - s * xq;
          cq[k] = s * xp + c * xq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sigma(m);
  for (std::size_t i = 0; i < m; ++i) sigma[i] = norm2(cols.row(i));
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

  LeftSingular out{Matrix(d, m), std::vector<double>(m)};
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t src = order[k];
    out.values[k] = sigma[src];
    if (sigma[src] == 0.0) continue;
    // Sign convention: the largest-magnitude component is positive.
    const auto v = cols.row(src);
    std::size_t peak = 0;
    for (std::size_t a = 1; a < d; ++a) {
      if (std::abs(v[a]) > std::abs(v[peak])) peak = a;
    }
    const double scale = (v[peak] < 0.0 ? -1.0 : 1.0) / sigma[src];
    for (std::size_t a = 0; a < d; ++a) out.vectors(a, k) = v[a] * scale;
  }
  return out;
}

ProjectionBasis compute_text_basis(const EmbeddingSet& text, ProjectionVariant variant) {
  const std::size_t m = text.rows();
  const std::size_t d = text.dims();
  require(m >= 2, ErrorCode::kValidation, "text basis needs at least two class embeddings");

  ProjectionBasis pb;
  pb.variant = variant;
  pb.source_dims = d;
  pb.source_classes = m;
  if (variant == ProjectionVariant::kP0) {
    pb.basis = Matrix(d, 0);
    return pb;
  }

  const LeftSingular svd = left_singular_vectors(text.data);
  const double sigma_max = svd.values.empty() ? 0.0 : svd.values.front();
  std::size_t rank = 0;
  while (rank < svd.values.size() && svd.values[rank] > kRankEpsilon * sigma_max) ++rank;

  const std::size_t first = variant == ProjectionVariant::kP2 ? 1 : 0;
  if (variant == ProjectionVariant::kP2 && rank < 2) {
    fail(ErrorCode::kDegenerateSpan,
         "text embeddings span rank " + std::to_string(rank) + "; P2 needs at least 2");
  }
  require(rank >= 1, ErrorCode::kDegenerateSpan, "text embeddings are all zero");

  pb.basis = Matrix(d, rank - first);
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t k = first; k < rank; ++k) pb.basis(a, k - first) = svd.vectors(a, k);
  }
  return pb;
}

Matrix project_unnormalized(const ProjectionBasis& basis, const Matrix& x) {
  if (basis.variant == ProjectionVariant::kP0) return x;
  return kernels::omp::project_rows(basis.basis, x);
}

EmbeddingSet project(const ProjectionBasis& basis, const EmbeddingSet& x) {
  require(x.dims() == basis.source_dims, ErrorCode::kValidation,
          "embedding dims " + std::to_string(x.dims()) + " do not match basis dims " +
              std::to_string(basis.source_dims));
  if (basis.variant == ProjectionVariant::kP0) return l2_normalize(x);

  EmbeddingSet out;
  out.data = kernels::omp::project_rows(basis.basis, x.data);
  out.ids = x.ids;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.data.row(i);
    const double n = norm2(row);
    if (!(n > kProjectionFloor)) {
      fail(ErrorCode::kDegenerateProjection,
           "row '" + (i < x.ids.size() ? x.ids[i] : std::to_string(i)) +
               "' lies outside the projection span");
    }
    for (double& v : row) v /= n;
  }
  out.unit_norm = true;
  return out;
}

EmbeddingSet span_coordinates(const ProjectionBasis& basis, const EmbeddingSet& projected) {
  require(projected.dims() == basis.source_dims, ErrorCode::kValidation,
          "embedding dims do not match basis dims");
  if (basis.variant == ProjectionVariant::kP0) return projected;
  const std::size_t r = basis.basis.cols();
  EmbeddingSet out;
  out.data = Matrix(projected.rows(), r);
  out.ids = projected.ids;
  out.unit_norm = projected.unit_norm;
  for (std::size_t i = 0; i < projected.rows(); ++i) {
    const auto x = projected.data.row(i);
    auto c = out.data.row(i);
    for (std::size_t a = 0; a < basis.source_dims; ++a) {
      const auto b = basis.basis.row(a);
      for (std::size_t k = 0; k < r; ++k) c[k] += x[a] * b[k];
    }
  }
  return out;
}

AlignmentStats alignment_stats(const EmbeddingSet& visual, const EmbeddingSet& text,
                               const LabelVector& labels) {
  const std::size_t m = text.rows();
  const std::size_t n = visual.rows();
  require(labels.size() == n, ErrorCode::kValidation, "label count does not match visual rows");
  require(visual.dims() == text.dims(), ErrorCode::kValidation, "visual/text dims differ");
  validate(labels, m);

  AlignmentStats s;
  double tt = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (i != j) tt += dot(text.data.row(i), text.data.row(j));
    }
  }
  s.mean_text_text_cos = m > 1 ? tt / static_cast<double>(m * (m - 1)) : 0.0;

  const Matrix cos = kernels::omp::gram_nt(visual.data, text.data);
  double intra = 0.0;
  double inter = 0.0;
  std::size_t labeled = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const std::int64_t y = labels.values[j];
    if (y == LabelVector::kUnlabeled) continue;
    ++labeled;
    for (std::size_t i = 0; i < m; ++i) {
      if (static_cast<std::int64_t>(i) == y) intra += cos(j, i);
      else inter += cos(j, i);
    }
  }
  require(labeled > 0, ErrorCode::kValidation, "alignment statistics need at least one label");
  s.mean_intra_class_visual_text_cos = intra / static_cast<double>(labeled);
  s.mean_inter_class_visual_text_cos =
      m > 1 ? inter / static_cast<double>(labeled * (m - 1)) : 0.0;
  return s;
}

void save_basis(const ProjectionBasis& basis, const std::filesystem::path& path) {
  container::ByteWriter w;
  w.header(container::Tag::kBasis);
  const std::size_t d = basis.basis.rows();
  const std::size_t r = basis.basis.cols();
  w.u64(d);
  w.u64(r);
  w.u8(static_cast<std::uint8_t>(basis.variant));
  for (std::size_t k = 0; k < r; ++k) {
    for (std::size_t a = 0; a < d; ++a) w.f64(basis.basis(a, k));
  }
  container::write_file(path, w.bytes());
}

ProjectionBasis load_basis(const std::filesystem::path& path) {
  container::Tag tag{};
  auto r = container::open(path, tag);
  if (tag != container::Tag::kBasis) fail(ErrorCode::kFormat, path.string() + " is not a basis");
  ProjectionBasis pb;
  const std::uint64_t d = r.u64();
  const std::uint64_t rank = r.u64();
  const std::uint8_t variant = r.u8();
  if (variant > 2) fail(ErrorCode::kFormat, "unknown basis variant " + std::to_string(variant));
  if (rank != 0 && d > r.remaining() / 8 / rank) fail(ErrorCode::kIo, "truncated basis payload");
  pb.variant = static_cast<ProjectionVariant>(variant);
  pb.source_dims = d;
  pb.basis = Matrix(d, rank);
  for (std::uint64_t k = 0; k < rank; ++k) {
    for (std::uint64_t a = 0; a < d; ++a) pb.basis(a, k) = r.f64();
  }
  for (double v : pb.basis.data()) {
    if (!std::isfinite(v)) fail(ErrorCode::kValidation, "non-finite basis entry");
  }
  return pb;
}

}  // namespace rclp
