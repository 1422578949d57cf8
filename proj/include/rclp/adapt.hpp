#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "rclp/embedstore.hpp"
#include "rclp/labelprop.hpp"
#include "rclp/matrix.hpp"
#include "rclp/projection.hpp"

namespace rclp {

/// Gain entries never get closer to zero than this.
inline constexpr double kMinGain = 1e-6;

/// Per-dimension gain and bias applied to embeddings before renormalization,
/// the embedding-space counterpart of a layer norm's learnable scale and shift.
struct AffineAdapter {
  std::vector<double> gain;
  std::vector<double> bias;

  static AffineAdapter identity(std::size_t dims);
  std::size_t dims() const noexcept { return gain.size(); }

  friend bool operator==(const AffineAdapter&, const AffineAdapter&) = default;
};

struct OptimizerState {
  std::vector<double> gain_buffer;
  std::vector<double> bias_buffer;
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t step_count = 0;

  static OptimizerState for_adapter(const AffineAdapter& a, double lr, double momentum,
                                    double weight_decay);
};

struct ClassCenters {
  Matrix centers;  // m x d, unit rows
  std::vector<std::size_t> counts;

  EmbeddingSet as_embeddings() const;
};

/// row -> l2_normalize(row * gain + bias)
EmbeddingSet adapter_forward(const AffineAdapter& a, const EmbeddingSet& x);

/// logits(j, i) = scale * rows_j . cols_i
Matrix cosine_logits(const EmbeddingSet& rows, const EmbeddingSet& cols, double scale);

struct LossAndGrad {
  double loss = 0.0;
  Matrix dlogits;
};

/// Mean cross-entropy over the masked rows and its gradient w.r.t. the logits.
LossAndGrad ce_loss_and_grads(const Matrix& logits, std::span<const std::size_t> labels,
                              const std::vector<bool>& mask);
LossAndGrad ce_loss_and_grads(const Matrix& logits, const PseudoLabelSet& labels,
                              const std::vector<bool>& mask);

/// Which operand of cosine_logits went through the adapter.
enum class TrainableSide { kRows, kColumns };

struct AdapterGrads {
  std::vector<double> gain;
  std::vector<double> bias;
};

/// Exact gradient of the loss w.r.t. the adapter parameters along
///   x -> x*g + b -> normalize -> P -> normalize -> cosine_logits(., partner) * scale
/// where P is the projection of `basis` (identity when null or P0). The basis and
/// the partner are held fixed.
AdapterGrads backprop_to_adapter(const AffineAdapter& a, const EmbeddingSet& x,
                                 const Matrix& dlogits, const EmbeddingSet& partner, double scale,
                                 TrainableSide side, const ProjectionBasis* basis = nullptr);

/// Forward pass matching backprop_to_adapter: adapter, then projection.
EmbeddingSet adapt_and_project(const AffineAdapter& a, const EmbeddingSet& x,
                               const ProjectionBasis* basis);

/// Normalized mean of the rows assigned to each class (restricted to `mask` when
/// given). Classes with no members, or whose mean vanishes, take the row of `fallback`.
ClassCenters class_centers(const EmbeddingSet& visual, std::span<const std::size_t> labels,
                           std::size_t m, const EmbeddingSet& fallback,
                           const std::vector<bool>* mask = nullptr);

/// buf <- momentum * buf + grad + weight_decay * param; param <- param - lr * buf
void sgd_update(std::span<double> params, std::span<const double> grads, std::span<double> buffer,
                double lr, double momentum, double weight_decay);

/// Applies sgd_update to gain and bias, then keeps |gain| >= kMinGain.
void sgd_step(AffineAdapter& a, const AdapterGrads& grads, OptimizerState& state);

void save_adapter(const AffineAdapter& a, const std::filesystem::path& path);
AffineAdapter load_adapter(const std::filesystem::path& path);

}  // namespace rclp
