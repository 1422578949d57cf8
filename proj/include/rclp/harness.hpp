#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rclp/embedstore.hpp"

namespace rclp {

/// Fraction of positions where preds matches gt. gt must carry no sentinels.
double top1_accuracy(std::span<const std::size_t> preds, const LabelVector& gt);

/// Synthetic misaligned-modality benchmark. Texts share one offset direction
/// scaled by `delta` and cluster tightly (`sigma_t`); images scatter around their
/// class direction with per-coordinate noise `sigma_v`.
struct SynthSpec {
  std::size_t classes = 10;
  std::size_t per_class = 200;
  std::size_t dims = 64;
  double sigma_v = 0.35;
  double sigma_t = 0.05;
  double delta = 1.5;
  /// Prompt variants averaged into the multi-template catalog.
  std::size_t templates = 4;
  std::uint64_t seed = 7;
};

struct SynthData {
  EmbeddingSet visual;
  ClassCatalog catalog;
  LabelVector gt;
};

void validate(const SynthSpec& spec);
SynthData generate_synth(const SynthSpec& spec);

struct Partition {
  EmbeddingSet visual;
  LabelVector gt;
  std::vector<std::size_t> source_rows;
};

/// Seeded split stratified by class; the first partition takes `fraction` of each
/// class (rounded, at least one row on each side). Row order is preserved.
std::pair<Partition, Partition> split_transductive_inductive(const EmbeddingSet& visual,
                                                             const LabelVector& gt,
                                                             double fraction,
                                                             std::uint64_t seed);

struct EpochRow {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double loss_text = 0.0;
  double loss_visual = 0.0;
  double agreement_fraction = 0.0;
  std::optional<double> pseudo_label_accuracy_text;
  std::optional<double> pseudo_label_accuracy_visual;
  /// Accuracy of the shared labels over the agreed samples.
  std::optional<double> agreed_accuracy;
  std::optional<double> ensemble_accuracy;
};

struct EvalReport {
  std::vector<EpochRow> per_epoch;
  std::optional<double> zero_shot_single;
  std::optional<double> zero_shot_multi;
  std::optional<double> final_accuracy;
  std::optional<double> peak_accuracy;
  std::size_t peak_epoch = 0;
  std::size_t total_steps = 0;
  std::vector<std::string> warnings;

  /// The better of the two branches' epoch-0 pseudo-label accuracies.
  std::optional<double> bootstrap_accuracy() const;
  /// Sets final/peak from per_epoch ensemble accuracies.
  void finalize();
};

void write_report_csv(const EvalReport& report, std::ostream& out);
nlohmann::json report_to_json(const EvalReport& report);

/// Sorted keys, two-space indent, trailing newline.
std::string canonical_json(const nlohmann::json& j);

}  // namespace rclp
