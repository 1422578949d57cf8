#pragma once

#include <optional>
#include <ostream>
#include <string_view>
#include <vector>

#include "rclp/embedstore.hpp"
#include "rclp/projection.hpp"
#include "rclp/matrix.hpp"
#include "rclp/sparse.hpp"

namespace rclp {

enum class LabelSource : std::uint8_t {
  kTextBranch,
  kVisualBranch,
  kAgreed,
  kModelPrediction,
  kNeighborVote,
};

std::string_view source_name(LabelSource s);

struct PseudoLabelSet {
  std::vector<std::size_t> labels;
  std::vector<double> confidence;
  LabelSource source = LabelSource::kTextBranch;
  std::optional<std::vector<bool>> agreement_mask;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t masked_count() const;

  friend bool operator==(const PseudoLabelSet&, const PseudoLabelSet&) = default;
};

struct DiffusionResult {
  Matrix scores;  // (m + n) x m
  std::vector<std::size_t> cg_iterations;
  std::vector<double> residuals;
};

struct LabelPropConfig {
  double alpha = 0.99;
  std::size_t k = 20;
  double gamma = 1.0;
  double cg_tol = 1e-6;
  std::size_t cg_max_iter = 200;
  /// Above this many classes, diffusion is skipped for nearest-text predictions.
  std::size_t max_classes = 500;
  /// Softmax temperature for the confidence of nearest-text predictions.
  double logit_scale = 100.0;
};

/// Solves (I - alpha W) Z = Y column by column, where Y marks the first m nodes
/// as labeled with their own class. `debug`, when set, receives Z rows m..m+9.
DiffusionResult propagate(const SparseMatrix& w, std::size_t m, double alpha, double cg_tol,
                          std::size_t cg_max_iter, std::ostream* debug = nullptr);

/// Label of image j is the argmax of row m + j (ties to the lower class);
/// confidence is the winning score over the row sum, clipped to [0, 1].
PseudoLabelSet extract_pseudo_labels(const DiffusionResult& z, std::size_t m,
                                     LabelSource source = LabelSource::kTextBranch);

/// Nearest-text argmax; confidence is the softmax probability at `logit_scale`.
PseudoLabelSet nearest_text_labels(const EmbeddingSet& visual, const EmbeddingSet& text,
                                   double logit_scale);

/// Majority of the nearest-text votes among each image's k nearest other images.
PseudoLabelSet knn_pseudo_labels(const EmbeddingSet& visual, const EmbeddingSet& text,
                                 std::size_t k);

/// Average images per class, the default neighbourhood for knn_pseudo_labels.
std::size_t default_knn_k(std::size_t images, std::size_t classes);

/// Graph pipeline over already-projected embeddings: texts are the first m nodes,
/// images follow. Falls back to nearest-text predictions when alpha == 0 or the
/// class count exceeds cfg.max_classes. k is capped at m + n - 1.
PseudoLabelSet label_images(const EmbeddingSet& visual, const EmbeddingSet& text,
                            const LabelPropConfig& cfg, std::ostream* debug = nullptr);

/// label_images over rows already projected with `basis`, computed in basis
/// coordinates (same similarities, rank instead of d multiplies per pair).
PseudoLabelSet label_projected(const ProjectionBasis& basis, const EmbeddingSet& visual_hat,
                               const EmbeddingSet& text_hat, const LabelPropConfig& cfg,
                               std::ostream* debug = nullptr);

}  // namespace rclp
