#include "rclp/labelprop.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>

#include "rclp/affinity.hpp"
#include "rclp/error.hpp"
#include "rclp/kernels.hpp"

namespace rclp {

std::string_view source_name(LabelSource s) {
  switch (s) {
    case LabelSource::kTextBranch: return "TEXT_BRANCH";
    case LabelSource::kVisualBranch: return "VISUAL_BRANCH";
    case LabelSource::kAgreed: return "AGREED";
    case LabelSource::kModelPrediction: return "MODEL_PREDICTION";
    case LabelSource::kNeighborVote: return "NEIGHBOR_VOTE";
  }
  return "?";
}

std::size_t PseudoLabelSet::masked_count() const {
  if (!agreement_mask) return labels.size();
  return static_cast<std::size_t>(std::count(agreement_mask->begin(), agreement_mask->end(), true));
}

DiffusionResult propagate(const SparseMatrix& w, std::size_t m, double alpha, double cg_tol,
                          std::size_t cg_max_iter, std::ostream* debug) {
  require(alpha >= 0.0 && alpha < 1.0, ErrorCode::kValidation, "alpha must lie in [0, 1)");
  require(m >= 1 && m <= w.size, ErrorCode::kValidation, "labeled count out of range");
  require(w.symmetric, ErrorCode::kValidation, "propagation needs a symmetric normalized graph");
  require(cg_tol > 0.0, ErrorCode::kValidation, "cg tolerance must be positive");

  DiffusionResult result;
  const auto columns =
      kernels::omp::diffusion_columns(w, m, alpha, {cg_tol, cg_max_iter}, result.scores);
  double worst = 0.0;
  for (const auto& c : columns) {
    result.cg_iterations.push_back(c.iterations);
    result.residuals.push_back(c.relative_residual);
    worst = std::max(worst, c.relative_residual);
  }
  if (!(worst <= cg_tol)) {
    throw SolverError("conjugate gradient did not reach tolerance within " +
                          std::to_string(cg_max_iter) + " iterations (worst residual " +
                          std::to_string(worst) + ")",
                      worst);
  }

  if (debug) {
    *debug << std::setprecision(10);
    const std::size_t last = std::min(w.size, m + 10);
    for (std::size_t r = m; r < last; ++r) {
      *debug << "z[" << (r - m) << "]";
      for (std::size_t c = 0; c < m; ++c) *debug << ' ' << result.scores(r, c);
      *debug << '\n';
    }
  }
  return result;
}

PseudoLabelSet extract_pseudo_labels(const DiffusionResult& z, std::size_t m, LabelSource source) {
  const Matrix& s = z.scores;
  require(s.cols() == m && s.rows() >= m + 1, ErrorCode::kValidation,
          "diffusion scores need at least m + 1 rows and m columns");
  const std::size_t n = s.rows() - m;
  PseudoLabelSet out;
  out.source = source;
  out.labels.resize(n);
  out.confidence.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto row = s.row(m + j);
    std::size_t best = 0;
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (row[i] > row[best]) best = i;
      sum += row[i];
    }
    out.labels[j] = best;
    out.confidence[j] = std::clamp(row[best] / (sum + 1e-12), 0.0, 1.0);
  }
  return out;
}

PseudoLabelSet nearest_text_labels(const EmbeddingSet& visual, const EmbeddingSet& text,
                                   double logit_scale) {
  require(visual.dims() == text.dims(), ErrorCode::kValidation, "visual/text dims differ");
  const Matrix cos = kernels::omp::gram_nt(visual.data, text.data);
  const std::size_t m = text.rows();
  PseudoLabelSet out;
  out.source = LabelSource::kModelPrediction;
  out.labels.resize(visual.rows());
  out.confidence.resize(visual.rows());
  for (std::size_t j = 0; j < visual.rows(); ++j) {
    const auto row = cos.row(j);
    std::size_t best = 0;
    for (std::size_t i = 1; i < m; ++i) {
      if (row[i] > row[best]) best = i;
    }
    double z = 0.0;
    for (std::size_t i = 0; i < m; ++i) z += std::exp(logit_scale * (row[i] - row[best]));
    out.labels[j] = best;
    out.confidence[j] = 1.0 / z;
  }
  return out;
}

PseudoLabelSet knn_pseudo_labels(const EmbeddingSet& visual, const EmbeddingSet& text,
                                 std::size_t k) {
  const std::size_t n = visual.rows();
  const std::size_t m = text.rows();
  require(k >= 1 && k < n, ErrorCode::kValidation,
          "neighbourhood size must lie in [1, " + std::to_string(n) + ")");
  const PseudoLabelSet votes = nearest_text_labels(visual, text, 1.0);
  const SparseMatrix neighbours = kernels::omp::topk_similarity(visual.data, k, 1.0);

  PseudoLabelSet out;
  out.source = LabelSource::kNeighborVote;
  out.labels.resize(n);
  out.confidence.resize(n);
  std::vector<std::size_t> tally(m);
  for (std::size_t j = 0; j < n; ++j) {
    std::fill(tally.begin(), tally.end(), 0);
    for (std::size_t p = neighbours.row_offsets[j]; p < neighbours.row_offsets[j + 1]; ++p) {
      ++tally[votes.labels[neighbours.col_indices[p]]];
    }
    const auto best = static_cast<std::size_t>(std::max_element(tally.begin(), tally.end()) -
                                               tally.begin());
    out.labels[j] = best;
    out.confidence[j] = static_cast<double>(tally[best]) / static_cast<double>(k);
  }
  return out;
}

std::size_t default_knn_k(std::size_t images, std::size_t classes) {
  require(classes >= 1, ErrorCode::kValidation, "class count must be positive");
  return std::max<std::size_t>(1, images / classes);
}

PseudoLabelSet label_images(const EmbeddingSet& visual, const EmbeddingSet& text,
                            const LabelPropConfig& cfg, std::ostream* debug) {
  const std::size_t m = text.rows();
  const std::size_t n = visual.rows();
  require(visual.dims() == text.dims(), ErrorCode::kValidation, "visual/text dims differ");
  if (cfg.alpha == 0.0 || m > cfg.max_classes) {
    return nearest_text_labels(visual, text, cfg.logit_scale);
  }

  Matrix nodes(m + n, text.dims());
  std::copy(text.data.data().begin(), text.data.data().end(), nodes.data().begin());
  std::copy(visual.data.data().begin(), visual.data.data().end(),
            nodes.data().begin() + static_cast<std::ptrdiff_t>(m * text.dims()));
  const EmbeddingSet union_set = make_embeddings(std::move(nodes), true);

  const std::size_t k = std::min(cfg.k, m + n - 1);
  const SparseMatrix w = normalize_symmetric(build_topk_affinity(union_set, k, cfg.gamma));
  const DiffusionResult z = propagate(w, m, cfg.alpha, cfg.cg_tol, cfg.cg_max_iter, debug);
  return extract_pseudo_labels(z, m);
}

PseudoLabelSet label_projected(const ProjectionBasis& basis, const EmbeddingSet& visual_hat,
                               const EmbeddingSet& text_hat, const LabelPropConfig& cfg,
                               std::ostream* debug) {
  return label_images(span_coordinates(basis, visual_hat), span_coordinates(basis, text_hat), cfg,
                      debug);
}

}  // namespace rclp
