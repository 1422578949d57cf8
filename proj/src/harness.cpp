#include "rclp/harness.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <random>

#include "rclp/error.hpp"

namespace rclp {

double top1_accuracy(std::span<const std::size_t> preds, const LabelVector& gt) {
  require(preds.size() == gt.size(), ErrorCode::kValidation,
          "prediction count " + std::to_string(preds.size()) + " does not match " +
              std::to_string(gt.size()) + " labels");
  require(!preds.empty(), ErrorCode::kValidation, "accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t j = 0; j < preds.size(); ++j) {
    require(gt.values[j] != LabelVector::kUnlabeled, ErrorCode::kValidation,
            "ground truth contains unlabeled rows");
    if (static_cast<std::int64_t>(preds[j]) == gt.values[j]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

void validate(const SynthSpec& spec) {
  require(spec.classes >= 2, ErrorCode::kValidation, "synthetic benchmark needs >= 2 classes");
  require(spec.dims >= spec.classes + 1, ErrorCode::kValidation, "synthetic dims must exceed classes");
  require(spec.per_class >= 1, ErrorCode::kValidation, "need at least one image per class");
  require(spec.templates >= 1, ErrorCode::kValidation, "need at least one template");
  require(spec.sigma_v >= 0.0 && spec.sigma_t >= 0.0 && spec.delta >= 0.0,
          ErrorCode::kValidation, "spreads and offset must be nonnegative");
}

namespace {

std::vector<double> random_unit(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(d);
  for (double& x : v) x = gauss(rng);
  const double n = norm2(v);
  for (double& x : v) x /= n;
  return v;
}

void normalize_in_place(std::span<double> v) {
  const double n = norm2(v);
  for (double& x : v) x /= n;
}

}  // namespace

SynthData generate_synth(const SynthSpec& spec) {
  validate(spec);
  const std::size_t m = spec.classes;
  const std::size_t d = spec.dims;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Class directions plus the shared offset: Gram-Schmidt over Gaussian draws,
  // so all m + 1 are orthonormal.
  std::vector<std::vector<double>> centers;
  while (centers.size() < m + 1) {
    std::vector<double> v = random_unit(rng, d);
    for (const auto& u : centers) {
      const double p = dot(v, u);
      for (std::size_t a = 0; a < d; ++a) v[a] -= p * u[a];
    }
    const double n = norm2(v);
    if (n < 1e-6) continue;
    for (double& x : v) x /= n;
    centers.push_back(std::move(v));
  }
  const std::vector<double> offset = std::move(centers.back());
  centers.pop_back();

  auto text_sample = [&](std::size_t c, std::span<double> out) {
    for (std::size_t a = 0; a < d; ++a) {
      out[a] = centers[c][a] + spec.delta * offset[a] + spec.sigma_t * gauss(rng);
    }
    normalize_in_place(out);
  };

  SynthData data;
  Matrix single(m, d);
  Matrix multi(m, d);
  std::vector<double> variant(d);
  for (std::size_t c = 0; c < m; ++c) {
    text_sample(c, single.row(c));
    auto acc = multi.row(c);
    for (std::size_t t = 0; t < spec.templates; ++t) {
      text_sample(c, variant);
      for (std::size_t a = 0; a < d; ++a) acc[a] += variant[a];
    }
    normalize_in_place(acc);
  }
  data.catalog.single_template = make_embeddings(std::move(single), true);
  data.catalog.multi_template = make_embeddings(std::move(multi), true);
  for (std::size_t c = 0; c < m; ++c) data.catalog.names.push_back("class_" + std::to_string(c));

  const std::size_t n = m * spec.per_class;
  std::vector<std::size_t> classes(n);
  for (std::size_t j = 0; j < n; ++j) classes[j] = j / spec.per_class;
  std::shuffle(classes.begin(), classes.end(), rng);

  Matrix images(n, d);
  for (std::size_t j = 0; j < n; ++j) {
    auto row = images.row(j);
    for (std::size_t a = 0; a < d; ++a) {
      row[a] = centers[classes[j]][a] + spec.sigma_v * gauss(rng);
    }
    normalize_in_place(row);
    data.gt.values.push_back(static_cast<std::int64_t>(classes[j]));
  }
  data.visual = make_embeddings(std::move(images), true);
  for (std::size_t j = 0; j < n; ++j) data.visual.ids[j] = "img" + std::to_string(j);
  return data;
}

std::pair<Partition, Partition> split_transductive_inductive(const EmbeddingSet& visual,
                                                             const LabelVector& gt,
                                                             double fraction,
                                                             std::uint64_t seed) {
  require(fraction > 0.0 && fraction < 1.0, ErrorCode::kValidation,
          "split fraction must lie in (0, 1)");
  require(visual.rows() == gt.size(), ErrorCode::kValidation, "labels do not match rows");

  std::map<std::int64_t, std::vector<std::size_t>> by_class;
  for (std::size_t j = 0; j < gt.size(); ++j) {
    require(gt.values[j] != LabelVector::kUnlabeled, ErrorCode::kValidation,
            "cannot stratify unlabeled rows");
    by_class[gt.values[j]].push_back(j);
  }

  std::mt19937_64 rng(seed);
  std::vector<bool> in_first(gt.size(), false);
  for (auto& [label, rows] : by_class) {
    require(rows.size() >= 2, ErrorCode::kValidation,
            "class " + std::to_string(label) + " has fewer than 2 samples");
    std::shuffle(rows.begin(), rows.end(), rng);
    const auto want = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(rows.size())));
    const std::size_t take = std::clamp<std::size_t>(want, 1, rows.size() - 1);
    for (std::size_t p = 0; p < take; ++p) in_first[rows[p]] = true;
  }

  std::pair<Partition, Partition> out;
  for (std::size_t j = 0; j < gt.size(); ++j) {
    (in_first[j] ? out.first : out.second).source_rows.push_back(j);
  }
  for (Partition* part : {&out.first, &out.second}) {
    Matrix rows(part->source_rows.size(), visual.dims());
    for (std::size_t p = 0; p < part->source_rows.size(); ++p) {
      const auto src = visual.data.row(part->source_rows[p]);
      std::copy(src.begin(), src.end(), rows.row(p).begin());
      part->visual.ids.push_back(visual.ids[part->source_rows[p]]);
      part->gt.values.push_back(gt.values[part->source_rows[p]]);
    }
    part->visual.data = std::move(rows);
    part->visual.unit_norm = visual.unit_norm;
  }
  return out;
}

std::optional<double> EvalReport::bootstrap_accuracy() const {
  if (per_epoch.empty()) return std::nullopt;
  const EpochRow& first = per_epoch.front();
  if (!first.pseudo_label_accuracy_text || !first.pseudo_label_accuracy_visual) return std::nullopt;
  return std::max(*first.pseudo_label_accuracy_text, *first.pseudo_label_accuracy_visual);
}

void EvalReport::finalize() {
  final_accuracy.reset();
  peak_accuracy.reset();
  peak_epoch = 0;
  for (const EpochRow& row : per_epoch) {
    if (!row.ensemble_accuracy) continue;
    if (!peak_accuracy || *row.ensemble_accuracy > *peak_accuracy) {
      peak_accuracy = row.ensemble_accuracy;
      peak_epoch = row.epoch;
    }
    final_accuracy = row.ensemble_accuracy;
  }
}

namespace {

void put_optional(std::ostream& out, const std::optional<double>& v) {
  if (v) out << *v;
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

void write_report_csv(const EvalReport& report, std::ostream& out) {
  out << "epoch,steps,loss_text,loss_visual,agreement_fraction,pseudo_label_accuracy_text,"
         "pseudo_label_accuracy_visual,agreed_accuracy,ensemble_accuracy\n";
  out << std::setprecision(10);
  for (const EpochRow& r : report.per_epoch) {
    out << r.epoch << ',' << r.steps << ',' << r.loss_text << ',' << r.loss_visual << ','
        << r.agreement_fraction << ',';
    put_optional(out, r.pseudo_label_accuracy_text);
    out << ',';
    put_optional(out, r.pseudo_label_accuracy_visual);
    out << ',';
    put_optional(out, r.agreed_accuracy);
    out << ',';
    put_optional(out, r.ensemble_accuracy);
    out << '\n';
  }
}

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const EpochRow& r : report.per_epoch) {
    rows.push_back({{"epoch", r.epoch},
                    {"steps", r.steps},
                    {"loss_text", r.loss_text},
                    {"loss_visual", r.loss_visual},
                    {"agreement_fraction", r.agreement_fraction},
                    {"pseudo_label_accuracy_text", optional_json(r.pseudo_label_accuracy_text)},
                    {"pseudo_label_accuracy_visual", optional_json(r.pseudo_label_accuracy_visual)},
                    {"agreed_accuracy", optional_json(r.agreed_accuracy)},
                    {"ensemble_accuracy", optional_json(r.ensemble_accuracy)}});
  }
  return {{"per_epoch", rows},
          {"zero_shot_single", optional_json(report.zero_shot_single)},
          {"zero_shot_multi", optional_json(report.zero_shot_multi)},
          {"bootstrap_accuracy", optional_json(report.bootstrap_accuracy())},
          {"final_accuracy", optional_json(report.final_accuracy)},
          {"peak_accuracy", optional_json(report.peak_accuracy)},
          {"peak_epoch", report.peak_epoch},
          {"total_steps", report.total_steps},
          {"warnings", report.warnings}};
}

std::string canonical_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

}  // namespace rclp
