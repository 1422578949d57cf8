#include <map>
#include <numeric>
#include <sstream>

#include "rclp/harness.hpp"
#include "rclp/labelprop.hpp"
#include "rclp/projection.hpp"
#include "test_support.hpp"

namespace rclp {
namespace {

LabelVector gt_of(std::vector<std::int64_t> v) { return LabelVector{std::move(v)}; }

double zero_shot(const SynthData& data) {
  return top1_accuracy(nearest_text_labels(data.visual, data.catalog.single_template, 1.0).labels,
                       data.gt);
}

TEST(Accuracy, Examples) {
  const std::vector<std::size_t> p{0, 1, 2, 1};
  EXPECT_EQ(top1_accuracy(p, gt_of({0, 1, 2, 1})), 1.0);
  EXPECT_EQ(top1_accuracy(p, gt_of({1, 0, 0, 0})), 0.0);
  EXPECT_EQ(top1_accuracy(p, gt_of({0, 1, 2, 0})), 0.75);
  EXPECT_RCLP_ERROR(top1_accuracy(p, gt_of({0, 1})), ErrorCode::kValidation);
  EXPECT_RCLP_ERROR(top1_accuracy(p, gt_of({0, 1, 2, -1})), ErrorCode::kValidation);
}

TEST(Accuracy, PermutationInvariant) {
  std::mt19937_64 rng(1);
  std::vector<std::size_t> p(40);
  std::vector<std::int64_t> g(40);
  for (std::size_t i = 0; i < 40; ++i) {
    p[i] = rng() % 3;
    g[i] = static_cast<std::int64_t>(rng() % 3);
  }
  const double before = top1_accuracy(p, gt_of(g));
  std::vector<std::size_t> order(40);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> p2;
  std::vector<std::int64_t> g2;
  for (std::size_t i : order) {
    p2.push_back(p[i]);
    g2.push_back(g[i]);
  }
  EXPECT_EQ(top1_accuracy(p2, gt_of(g2)), before);
}

TEST(Synth, DeterministicBytes) {
  const SynthData a = generate_synth({});
  const SynthData b = generate_synth({});
  EXPECT_EQ(encode(a.visual), encode(b.visual));
  EXPECT_EQ(encode(a.catalog), encode(b.catalog));
  EXPECT_EQ(encode(a.gt), encode(b.gt));
  SynthSpec other;
  other.seed = 8;
  EXPECT_NE(encode(generate_synth(other).visual), encode(a.visual));
}

TEST(Synth, ShapesAndBalancedClasses) {
  const SynthData d = generate_synth({});
  EXPECT_EQ(d.visual.rows(), 2000u);
  EXPECT_EQ(d.visual.dims(), 64u);
  EXPECT_EQ(d.catalog.classes(), 10u);
  ASSERT_TRUE(d.catalog.multi_template.has_value());
  std::map<std::int64_t, int> counts;
  for (auto v : d.gt.values) ++counts[v];
  for (const auto& [c, k] : counts) EXPECT_EQ(k, 200) << c;
}

TEST(Synth, PerfectGeometryIsSolvedByZeroShot) {
  SynthSpec spec;
  spec.delta = 0.0;
  spec.sigma_v = 0.0;
  spec.sigma_t = 0.0;
  EXPECT_EQ(zero_shot(generate_synth(spec)), 1.0);
}

TEST(Synth, InvalidSpecRejected) {
  SynthSpec spec;
  spec.dims = spec.classes;
  EXPECT_RCLP_ERROR(generate_synth(spec), ErrorCode::kValidation);
  spec = {};
  spec.classes = 1;
  EXPECT_RCLP_ERROR(generate_synth(spec), ErrorCode::kValidation);
}

// Reference constants, seed 7: the zero-shot baseline B is computed, then P2 +
// label propagation on the same single-template texts must beat it.
TEST(Synth, ReferenceSeedLabelPropagationBeatsZeroShot) {
  const SynthData data = generate_synth({});
  const double baseline = zero_shot(data);
  const EmbeddingSet texts = l2_normalize(data.catalog.single_template);
  const ProjectionBasis basis = compute_text_basis(texts, ProjectionVariant::kP2);
  const PseudoLabelSet lp =
      label_projected(basis, project(basis, data.visual), project(basis, texts), LabelPropConfig{});
  const double lp_accuracy = top1_accuracy(lp.labels, data.gt);
  RecordProperty("zero_shot", std::to_string(baseline));
  RecordProperty("label_propagation", std::to_string(lp_accuracy));
  EXPECT_GT(baseline, 0.0);
  EXPECT_LT(baseline, 1.0);
  EXPECT_GT(lp_accuracy, baseline);
}

TEST(Synth, P2TextsNearlyPerpendicularUnderLargeOffset) {
  SynthSpec spec;
  spec.classes = 20;
  spec.delta = 5.0;
  spec.sigma_t = 0.002;
  spec.sigma_v = 0.05;
  const SynthData data = generate_synth(spec);
  const EmbeddingSet texts = l2_normalize(data.catalog.single_template);
  // Raw texts all lean on the shared offset.
  EXPECT_GT(dot(texts.data.row(0), texts.data.row(1)), 0.9);
  const ProjectionBasis basis = compute_text_basis(texts, ProjectionVariant::kP2);
  const EmbeddingSet t = project(basis, texts);
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = i + 1; j < t.rows(); ++j)
      EXPECT_LT(std::abs(dot(t.data.row(i), t.data.row(j))), 0.1) << i << "," << j;
}

// Noise-free texts e_c + delta*o with orthonormal e_c, o: removing the top
// component leaves rows whose pairwise cosine is exactly -1/(m-1).
TEST(Synth, P2NoiseFreeCosineMatchesClosedForm) {
  for (std::size_t m : {3u, 10u, 20u}) {
    SynthSpec spec;
    spec.classes = m;
    spec.delta = 2.0;
    spec.sigma_t = 0.0;
    spec.per_class = 1;
    const SynthData data = generate_synth(spec);
    const EmbeddingSet texts = l2_normalize(data.catalog.single_template);
    const EmbeddingSet t = project(compute_text_basis(texts, ProjectionVariant::kP2), texts);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = i + 1; j < m; ++j)
        EXPECT_NEAR(dot(t.data.row(i), t.data.row(j)), -1.0 / static_cast<double>(m - 1), 1e-9)
            << m << ":" << i << "," << j;
  }
}

TEST(Split, HalfOfTenPerClass) {
  SynthSpec spec;
  spec.per_class = 10;
  const SynthData data = generate_synth(spec);
  const auto [a, b] = split_transductive_inductive(data.visual, data.gt, 0.5, 3);
  std::map<std::int64_t, int> ca, cb;
  for (auto v : a.gt.values) ++ca[v];
  for (auto v : b.gt.values) ++cb[v];
  for (std::int64_t c = 0; c < 10; ++c) {
    EXPECT_EQ(ca[c], 5);
    EXPECT_EQ(cb[c], 5);
  }

  std::vector<std::size_t> all = a.source_rows;
  all.insert(all.end(), b.source_rows.begin(), b.source_rows.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expected(data.visual.rows());
  std::iota(expected.begin(), expected.end(), 0);
  EXPECT_EQ(all, expected);
  for (std::size_t p = 0; p < a.source_rows.size(); ++p) {
    EXPECT_EQ(a.visual.ids[p], data.visual.ids[a.source_rows[p]]);
  }

  const auto [a2, b2] = split_transductive_inductive(data.visual, data.gt, 0.5, 3);
  EXPECT_EQ(a.source_rows, a2.source_rows);
}

TEST(Split, ProportionsWithinOneSample) {
  SynthSpec spec;
  spec.per_class = 17;
  const SynthData data = generate_synth(spec);
  const auto [a, b] = split_transductive_inductive(data.visual, data.gt, 0.3, 9);
  std::map<std::int64_t, int> ca;
  for (auto v : a.gt.values) ++ca[v];
  for (const auto& [c, k] : ca) EXPECT_LE(std::abs(k - 0.3 * 17), 1.0) << c;
}

TEST(Split, Errors) {
  const SynthData data = generate_synth({});
  EXPECT_RCLP_ERROR(split_transductive_inductive(data.visual, data.gt, 1.0, 1), ErrorCode::kValidation);
  SynthSpec spec;
  spec.per_class = 1;
  const SynthData tiny = generate_synth(spec);
  EXPECT_RCLP_ERROR(split_transductive_inductive(tiny.visual, tiny.gt, 0.5, 1), ErrorCode::kValidation);
}

TEST(Report, PeakFinalAndEmission) {
  EvalReport r;
  for (std::size_t e = 0; e < 3; ++e) {
    EpochRow row;
    row.epoch = e;
    row.agreement_fraction = 0.5;
    row.pseudo_label_accuracy_text = 0.6;
    row.pseudo_label_accuracy_visual = 0.7;
    row.ensemble_accuracy = std::vector<double>{0.5, 0.8, 0.75}[e];
    r.per_epoch.push_back(row);
  }
  r.finalize();
  EXPECT_EQ(*r.final_accuracy, 0.75);
  EXPECT_EQ(*r.peak_accuracy, 0.8);
  EXPECT_EQ(r.peak_epoch, 1u);
  EXPECT_EQ(*r.bootstrap_accuracy(), 0.7);

  std::ostringstream csv;
  write_report_csv(r, csv);
  const std::string text = csv.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
  EXPECT_EQ(text.rfind("epoch,steps,loss_text,loss_visual,agreement_fraction", 0), 0u);

  const nlohmann::json j = report_to_json(r);
  EXPECT_EQ(j["peak_epoch"], 1);
  EXPECT_EQ(j["per_epoch"].size(), 3u);
  EXPECT_TRUE(j["zero_shot_single"].is_null());
  const std::string canon = canonical_json(j);
  EXPECT_EQ(canon.back(), '\n');
  EXPECT_LT(canon.find("\"bootstrap_accuracy\""), canon.find("\"final_accuracy\""));
}

}  // namespace
}  // namespace rclp
