#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "rclp/adapt.hpp"
#include "rclp/embedstore.hpp"
#include "rclp/harness.hpp"
#include "rclp/labelprop.hpp"
#include "rclp/projection.hpp"

namespace rclp {

enum class Branch : std::uint8_t { kText, kVisual };
enum class RunMode : std::uint8_t { kTransductive, kInductive };

std::string_view branch_name(Branch b);
RunMode parse_mode(std::string_view name);
std::string_view mode_name(RunMode m);

struct RunConfig {
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  /// 0 selects 64, or 32 when there are more than 200 classes.
  std::size_t batch_size = 0;
  std::size_t max_iterations = 5000;
  std::size_t max_epochs = 50;
  double alpha = 0.99;
  std::size_t k = 20;
  double gamma = 1.0;
  double cg_tol = 1e-6;
  std::size_t cg_max_iter = 200;
  double logit_scale = 100.0;
  std::uint64_t seed = 0;
  RunMode mode = RunMode::kTransductive;

  std::size_t resolved_batch_size(std::size_t classes) const;
  LabelPropConfig labelprop() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

void validate(const RunConfig& cfg);
nlohmann::json to_json(const RunConfig& cfg);
/// Fields absent from `j` keep their value in `base`; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});

/// One branch of the dual self-training loop. `basis`, `classifier` and
/// `last_labels` describe the branch as of its latest refresh: the text branch
/// classifies against its adapted, projected texts, the visual branch against
/// class centers of its adapted, projected images.
struct BranchState {
  Branch branch = Branch::kText;
  AffineAdapter adapter;
  OptimizerState optimizer;
  ProjectionBasis basis;
  EmbeddingSet classifier;
  PseudoLabelSet last_labels;
};

BranchState make_branch(Branch branch, std::size_t dims, const RunConfig& cfg);

struct BranchPass {
  PseudoLabelSet labels;
  Matrix logits;  // n x m, scaled
};

/// Recomputes the branch's embeddings, P2 basis, projection and pseudo labels
/// from its current adapter, and stores them in `state`.
BranchPass refresh_branch(BranchState& state, const EmbeddingSet& visual,
                          const ClassCatalog& catalog, const RunConfig& cfg);

struct EpochOutcome {
  PseudoLabelSet fresh_labels;
  Matrix logits;
  double mean_loss = 0.0;
  std::size_t steps = 0;
  bool skipped = false;
  std::optional<std::string> warning;
};

/// Mini-batch SGD over the agreed samples of `shared` (text branch: CE against
/// adapted text logits; visual branch: CE against class-center logits), then a
/// refresh. At most `step_budget` steps are taken. `state` must have been
/// refreshed at least once.
EpochOutcome run_epoch(BranchState& state, const EmbeddingSet& visual, const ClassCatalog& catalog,
                       const PseudoLabelSet& shared, const RunConfig& cfg, std::size_t epoch,
                       std::size_t step_budget);

/// Mask marks where the two label sets agree. Disagreeing rows take the smaller
/// label and zero confidence so the result does not depend on argument order.
PseudoLabelSet share_labels(const PseudoLabelSet& text_labels, const PseudoLabelSet& visual_labels);

struct Inference {
  std::vector<std::size_t> predictions;
  Matrix probabilities;  // mean of the two branches' softmax outputs
};

/// Ensemble of two logit matrices: softmax each row, average, argmax.
Inference ensemble(const Matrix& text_logits, const Matrix& visual_logits);

/// Applies both trained branches to `x` with their stored bases and classifiers;
/// no pseudo labels are generated.
Inference infer(const BranchState& text, const BranchState& visual, const EmbeddingSet& x,
                const RunConfig& cfg);

struct SelfTrainingRun {
  BranchState text;
  BranchState visual;
  PseudoLabelSet shared;
  std::vector<std::size_t> predictions;
  EvalReport report;
};

SelfTrainingRun run_self_training(const EmbeddingSet& visual, const ClassCatalog& catalog, const RunConfig& cfg,
                     const std::optional<LabelVector>& eval_labels = std::nullopt);

/// Writes adapters, bases, classifiers, config.json, report.csv and report.json.
void save_checkpoint(const std::filesystem::path& dir, const SelfTrainingRun& run, const RunConfig& cfg);

struct Checkpoint {
  BranchState text;
  BranchState visual;
  RunConfig config;
};
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace rclp
