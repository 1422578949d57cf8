#include <cmath>
#include <fstream>

#include "rclp/selftrain.hpp"
#include "test_support.hpp"

namespace rclp {
namespace {

PseudoLabelSet labels_of(std::vector<std::size_t> values) {
  PseudoLabelSet p;
  p.labels = std::move(values);
  p.confidence.assign(p.labels.size(), 0.5);
  return p;
}

SynthData reference_data(std::uint64_t seed = 7) {
  SynthSpec spec;
  spec.seed = seed;
  return generate_synth(spec);
}

/// Branch loss under the objective the epoch optimized: the basis and classifier
/// stay as they were before the epoch, only the adapter varies.
double branch_objective(const BranchState& before, const AffineAdapter& adapter, const SynthData& data,
                        const PseudoLabelSet& shared, const RunConfig& cfg) {
  const EmbeddingSet& texts =
      before.branch == Branch::kText ? data.catalog.single_template : data.catalog.best_template();
  Matrix logits;
  if (before.branch == Branch::kText) {
    logits = cosine_logits(project(before.basis, data.visual),
                           adapt_and_project(adapter, texts, &before.basis), cfg.logit_scale);
  } else {
    logits = cosine_logits(adapt_and_project(adapter, data.visual, &before.basis), before.classifier,
                           cfg.logit_scale);
  }
  return ce_loss_and_grads(logits, shared, *shared.agreement_mask).loss;
}

TEST(ShareLabels, Examples) {
  const PseudoLabelSet same = share_labels(labels_of({0, 1, 2}), labels_of({0, 1, 2}));
  EXPECT_EQ(*same.agreement_mask, (std::vector<bool>{true, true, true}));
  EXPECT_EQ(same.source, LabelSource::kAgreed);
  const PseudoLabelSet none = share_labels(labels_of({0, 1}), labels_of({1, 0}));
  EXPECT_EQ(*none.agreement_mask, (std::vector<bool>{false, false}));
  EXPECT_EQ(none.masked_count(), 0u);
  const PseudoLabelSet mixed = share_labels(labels_of({0, 1, 2, 1}), labels_of({0, 2, 2, 0}));
  EXPECT_EQ(*mixed.agreement_mask, (std::vector<bool>{true, false, true, false}));
  EXPECT_EQ(mixed.labels[0], 0u);
  EXPECT_EQ(mixed.labels[2], 2u);
}

TEST(ShareLabels, Symmetric) {
  std::mt19937_64 rng(1);
  std::vector<std::size_t> a(50), b(50);
  for (auto& v : a) v = rng() % 4;
  for (auto& v : b) v = rng() % 4;
  const PseudoLabelSet ab = share_labels(labels_of(a), labels_of(b));
  const PseudoLabelSet ba = share_labels(labels_of(b), labels_of(a));
  EXPECT_EQ(ab.labels, ba.labels);
  EXPECT_EQ(ab.agreement_mask, ba.agreement_mask);
  EXPECT_RCLP_ERROR(share_labels(labels_of({0}), labels_of({0, 1})), ErrorCode::kValidation);
}

TEST(Ensemble, AveragesProbabilities) {
  const Matrix t(1, 2, std::vector<double>{std::log(0.6), std::log(0.4)});
  const Matrix v(1, 2, std::vector<double>{std::log(0.1), std::log(0.9)});
  const Inference inf = ensemble(t, v);
  EXPECT_EQ(inf.predictions[0], 1u);
  EXPECT_NEAR(inf.probabilities(0, 0), 0.35, 1e-12);
  EXPECT_NEAR(inf.probabilities(0, 1), 0.65, 1e-12);
}

TEST(Ensemble, AgreeingArgmaxIsPreserved) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix a = testing::random_matrix(rng, 1, 5), b = testing::random_matrix(rng, 1, 5);
    const std::size_t c = rng() % 5;
    a(0, c) = 10.0;
    b(0, c) = 10.0;
    EXPECT_EQ(ensemble(a, b).predictions[0], c);
  }
  EXPECT_RCLP_ERROR(ensemble(Matrix(1, 2), Matrix(1, 3)), ErrorCode::kValidation);
}

TEST(RunConfig, DefaultsAndBatchRule) {
  const RunConfig cfg;
  EXPECT_EQ(cfg.lr, 1e-3);
  EXPECT_EQ(cfg.momentum, 0.9);
  EXPECT_EQ(cfg.weight_decay, 1e-4);
  EXPECT_EQ(cfg.max_iterations, 5000u);
  EXPECT_EQ(cfg.max_epochs, 50u);
  EXPECT_EQ(cfg.alpha, 0.99);
  EXPECT_EQ(cfg.k, 20u);
  EXPECT_EQ(cfg.resolved_batch_size(200), 64u);
  EXPECT_EQ(cfg.resolved_batch_size(201), 32u);
}

TEST(RunConfig, JsonRoundTripAndUnknownKeys) {
  RunConfig cfg;
  cfg.lr = 0.25;
  cfg.seed = 99;
  cfg.mode = RunMode::kInductive;
  EXPECT_EQ(run_config_from_json(to_json(cfg)), cfg);
  EXPECT_RCLP_ERROR(run_config_from_json(nlohmann::json{{"learning_rate", 1.0}}), ErrorCode::kValidation);
  EXPECT_RCLP_ERROR(run_config_from_json(nlohmann::json{{"alpha", 1.0}}), ErrorCode::kValidation);
  EXPECT_RCLP_ERROR(run_config_from_json(nlohmann::json{{"k", "many"}}), ErrorCode::kValidation);
  const RunConfig partial = run_config_from_json(nlohmann::json{{"k", 5}}, cfg);
  EXPECT_EQ(partial.k, 5u);
  EXPECT_EQ(partial.lr, 0.25);
}

TEST(RunEpoch, ZeroMaskSkipsWithWarning) {
  const SynthData data = reference_data();
  const RunConfig cfg;
  BranchState state = make_branch(Branch::kVisual, data.visual.dims(), cfg);
  const BranchPass boot = refresh_branch(state, data.visual, data.catalog, cfg);
  PseudoLabelSet shared = boot.labels;
  shared.agreement_mask = std::vector<bool>(shared.size(), false);
  const AffineAdapter before = state.adapter;
  const EpochOutcome out = run_epoch(state, data.visual, data.catalog, shared, cfg, 1, 100);
  EXPECT_TRUE(out.skipped);
  ASSERT_TRUE(out.warning.has_value());
  EXPECT_NE(out.warning->find("skipped"), std::string::npos);
  EXPECT_EQ(out.steps, 0u);
  EXPECT_EQ(state.adapter, before);
}

TEST(RunEpoch, OneEpochReducesBranchLoss) {
  const SynthData data = reference_data();
  const RunConfig cfg;
  BranchState text = make_branch(Branch::kText, data.visual.dims(), cfg);
  BranchState visual = make_branch(Branch::kVisual, data.visual.dims(), cfg);
  const BranchPass bt = refresh_branch(text, data.visual, data.catalog, cfg);
  const BranchPass bv = refresh_branch(visual, data.visual, data.catalog, cfg);
  const PseudoLabelSet shared = share_labels(bt.labels, bv.labels);
  for (BranchState* state : {&text, &visual}) {
    const BranchState before = *state;
    const double loss_before = branch_objective(before, before.adapter, data, shared, cfg);
    const EpochOutcome out = run_epoch(*state, data.visual, data.catalog, shared, cfg, 1, 5000);
    EXPECT_GT(out.steps, 0u);
    const double loss_after = branch_objective(before, state->adapter, data, shared, cfg);
    EXPECT_LT(loss_after, loss_before) << branch_name(state->branch);
  }
}

TEST(RunEpoch, MaskedOutSamplesDoNotAffectUpdates) {
  const SynthData data = reference_data();
  const RunConfig cfg;
  for (Branch b : {Branch::kText, Branch::kVisual}) {
    BranchState state = make_branch(b, data.visual.dims(), cfg);
    const BranchPass boot = refresh_branch(state, data.visual, data.catalog, cfg);
    PseudoLabelSet shared = boot.labels;
    shared.agreement_mask = std::vector<bool>(shared.size(), true);
    (*shared.agreement_mask)[3] = false;

    EmbeddingSet perturbed = data.visual;
    auto row = perturbed.data.row(3);
    std::swap(row[0], row[1]);

    BranchState a = state, c = state;
    run_epoch(a, data.visual, data.catalog, shared, cfg, 1, 5);
    run_epoch(c, perturbed, data.catalog, shared, cfg, 1, 5);
    EXPECT_EQ(a.adapter, c.adapter) << branch_name(b);
  }
}

TEST(RunSelfTraining, FrozenTextBranchReproducesStandalonePipeline) {
  const SynthData data = reference_data();
  RunConfig cfg;
  cfg.max_epochs = 0;
  const SelfTrainingRun run = run_self_training(data.visual, data.catalog, cfg);

  const EmbeddingSet texts = l2_normalize(data.catalog.single_template);
  const ProjectionBasis basis = compute_text_basis(texts, ProjectionVariant::kP2);
  const PseudoLabelSet standalone = label_projected(basis, project(basis, data.visual),
                                                    project(basis, texts), cfg.labelprop());
  EXPECT_EQ(run.text.last_labels.labels, standalone.labels);
  // The identity adapter re-normalizes rows, so confidences agree to rounding.
  ASSERT_EQ(run.text.last_labels.confidence.size(), standalone.confidence.size());
  for (std::size_t j = 0; j < standalone.size(); ++j) {
    EXPECT_NEAR(run.text.last_labels.confidence[j], standalone.confidence[j], 1e-12) << j;
  }
}

TEST(RunSelfTraining, ZeroEpochsReportsBootstrapOnly) {
  const SynthData data = reference_data();
  RunConfig cfg;
  cfg.max_epochs = 0;
  const SelfTrainingRun run = run_self_training(data.visual, data.catalog, cfg, data.gt);
  ASSERT_EQ(run.report.per_epoch.size(), 1u);
  EXPECT_EQ(run.report.total_steps, 0u);
  EXPECT_TRUE(run.report.zero_shot_single.has_value());
  EXPECT_TRUE(run.report.zero_shot_multi.has_value());
  EXPECT_TRUE(run.report.bootstrap_accuracy().has_value());
  EXPECT_EQ(run.text.adapter, AffineAdapter::identity(data.visual.dims()));
}

TEST(RunSelfTraining, DeterministicAndRecordsAgreement) {
  const SynthData data = reference_data(3);
  RunConfig cfg;
  cfg.max_epochs = 3;
  cfg.seed = 5;
  const SelfTrainingRun a = run_self_training(data.visual, data.catalog, cfg, data.gt);
  const SelfTrainingRun b = run_self_training(data.visual, data.catalog, cfg, data.gt);
  EXPECT_EQ(canonical_json(report_to_json(a.report)), canonical_json(report_to_json(b.report)));
  EXPECT_EQ(a.predictions, b.predictions);
  ASSERT_EQ(a.report.per_epoch.size(), 4u);
  for (const EpochRow& row : a.report.per_epoch) {
    EXPECT_GT(row.agreement_fraction, 0.0);
    EXPECT_LE(row.agreement_fraction, 1.0);
  }
}

TEST(RunSelfTraining, IterationBudgetStopsTraining) {
  const SynthData data = reference_data();
  RunConfig cfg;
  cfg.max_iterations = 30;
  const SelfTrainingRun run = run_self_training(data.visual, data.catalog, cfg);
  EXPECT_EQ(run.report.total_steps, 30u);
  EXPECT_LT(run.report.per_epoch.size(), 51u);
}

TEST(Checkpoint, RoundTripAndInference) {
  const SynthData data = reference_data();
  RunConfig cfg;
  cfg.max_epochs = 2;
  const SelfTrainingRun run = run_self_training(data.visual, data.catalog, cfg, data.gt);
  const auto dir = testing::scratch_dir("checkpoint");
  save_checkpoint(dir, run, cfg);
  for (const char* name : {"config.json", "report.csv", "report.json", "text_adapter.rclp",
                           "visual_adapter.rclp", "text_basis.rclp", "visual_basis.rclp"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / name)) << name;
  }
  const Checkpoint cp = load_checkpoint(dir);
  EXPECT_EQ(cp.config, cfg);
  EXPECT_EQ(cp.text.adapter, run.text.adapter);
  EXPECT_EQ(cp.visual.adapter, run.visual.adapter);

  const Inference direct = infer(run.text, run.visual, data.visual, cfg);
  const Inference loaded = infer(cp.text, cp.visual, data.visual, cp.config);
  // Classifiers are stored as float32, so compare decisions rather than bits.
  EXPECT_GT(top1_accuracy(loaded.predictions, LabelVector{std::vector<std::int64_t>(
                                                  direct.predictions.begin(), direct.predictions.end())}),
            0.99);

  EXPECT_RCLP_ERROR(infer(cp.text, cp.visual, testing::rows_of({{1, 0, 0}}), cfg), ErrorCode::kValidation);
}

TEST(Inductive, HeldOutAccuracyCloseToTransductive) {
  const SynthData data = reference_data();
  const auto [train, held_out] = split_transductive_inductive(data.visual, data.gt, 0.5, 11);
  RunConfig cfg;
  cfg.mode = RunMode::kInductive;
  const SelfTrainingRun run = run_self_training(train.visual, data.catalog, cfg, train.gt);
  const double transductive = *run.report.final_accuracy;
  const double inductive = top1_accuracy(infer(run.text, run.visual, held_out.visual, cfg).predictions,
                                         held_out.gt);
  RecordProperty("transductive", std::to_string(transductive));
  RecordProperty("inductive", std::to_string(inductive));
  EXPECT_NEAR(inductive, transductive, 0.03);
}

}  // namespace
}  // namespace rclp
