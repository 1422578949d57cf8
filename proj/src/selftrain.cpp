#include "rclp/selftrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "rclp/error.hpp"

namespace rclp {

std::string_view branch_name(Branch b) { return b == Branch::kText ? "text" : "visual"; }

RunMode parse_mode(std::string_view name) {
  if (name == "transductive") return RunMode::kTransductive;
  if (name == "inductive") return RunMode::kInductive;
  fail(ErrorCode::kValidation, "unknown mode '" + std::string(name) + "'");
}

std::string_view mode_name(RunMode m) {
  return m == RunMode::kTransductive ? "transductive" : "inductive";
}

std::size_t RunConfig::resolved_batch_size(std::size_t classes) const {
  if (batch_size != 0) return batch_size;
  return classes > 200 ? 32 : 64;
}

LabelPropConfig RunConfig::labelprop() const {
  LabelPropConfig lp;
  lp.alpha = alpha;
  lp.k = k;
  lp.gamma = gamma;
  lp.cg_tol = cg_tol;
  lp.cg_max_iter = cg_max_iter;
  lp.logit_scale = logit_scale;
  return lp;
}

void validate(const RunConfig& cfg) {
  require(cfg.lr >= 0.0, ErrorCode::kValidation, "lr must be nonnegative");
  require(cfg.momentum >= 0.0 && cfg.momentum < 1.0, ErrorCode::kValidation,
          "momentum must lie in [0, 1)");
  require(cfg.weight_decay >= 0.0, ErrorCode::kValidation, "weight decay must be nonnegative");
  require(cfg.alpha >= 0.0 && cfg.alpha < 1.0, ErrorCode::kValidation, "alpha must lie in [0, 1)");
  require(cfg.k >= 1, ErrorCode::kValidation, "k must be at least 1");
  require(cfg.gamma > 0.0, ErrorCode::kValidation, "gamma must be positive");
  require(cfg.cg_tol > 0.0, ErrorCode::kValidation, "cg tolerance must be positive");
  require(cfg.cg_max_iter >= 1, ErrorCode::kValidation, "cg needs at least one iteration");
  require(cfg.logit_scale > 0.0, ErrorCode::kValidation, "logit scale must be positive");
}

nlohmann::json to_json(const RunConfig& cfg) {
  return {{"lr", cfg.lr},
          {"momentum", cfg.momentum},
          {"weight_decay", cfg.weight_decay},
          {"batch_size", cfg.batch_size},
          {"max_iterations", cfg.max_iterations},
          {"max_epochs", cfg.max_epochs},
          {"alpha", cfg.alpha},
          {"k", cfg.k},
          {"gamma", cfg.gamma},
          {"cg_tol", cfg.cg_tol},
          {"cg_max_iter", cfg.cg_max_iter},
          {"logit_scale", cfg.logit_scale},
          {"seed", cfg.seed},
          {"mode", std::string(mode_name(cfg.mode))}};
}

RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base) {
  require(j.is_object(), ErrorCode::kValidation, "run config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "lr") base.lr = value.get<double>();
      else if (key == "momentum") base.momentum = value.get<double>();
      else if (key == "weight_decay") base.weight_decay = value.get<double>();
      else if (key == "batch_size") base.batch_size = value.get<std::size_t>();
      else if (key == "max_iterations") base.max_iterations = value.get<std::size_t>();
      else if (key == "max_epochs") base.max_epochs = value.get<std::size_t>();
      else if (key == "alpha") base.alpha = value.get<double>();
      else if (key == "k") base.k = value.get<std::size_t>();
      else if (key == "gamma") base.gamma = value.get<double>();
      else if (key == "cg_tol") base.cg_tol = value.get<double>();
      else if (key == "cg_max_iter") base.cg_max_iter = value.get<std::size_t>();
      else if (key == "logit_scale") base.logit_scale = value.get<double>();
      else if (key == "seed") base.seed = value.get<std::uint64_t>();
      else if (key == "mode") base.mode = parse_mode(value.get<std::string>());
      else fail(ErrorCode::kValidation, "unknown run config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kValidation, std::string("bad run config value: ") + e.what());
  }
  validate(base);
  return base;
}

BranchState make_branch(Branch branch, std::size_t dims, const RunConfig& cfg) {
  BranchState s;
  s.branch = branch;
  s.adapter = AffineAdapter::identity(dims);
  s.optimizer = OptimizerState::for_adapter(s.adapter, cfg.lr, cfg.momentum, cfg.weight_decay);
  s.last_labels.source = branch == Branch::kText ? LabelSource::kTextBranch : LabelSource::kVisualBranch;
  return s;
}

namespace {

EmbeddingSet gather_rows(const EmbeddingSet& x, std::span<const std::size_t> rows) {
  EmbeddingSet out;
  out.data = Matrix(rows.size(), x.dims());
  out.ids.reserve(rows.size());
  for (std::size_t p = 0; p < rows.size(); ++p) {
    const auto src = x.data.row(rows[p]);
    std::copy(src.begin(), src.end(), out.data.row(p).begin());
    out.ids.push_back(x.ids[rows[p]]);
  }
  out.unit_norm = x.unit_norm;
  return out;
}

const EmbeddingSet& branch_texts(Branch b, const ClassCatalog& catalog) {
  return b == Branch::kText ? catalog.single_template : catalog.best_template();
}

void tag_source(PseudoLabelSet& labels, Branch b) {
  if (labels.source == LabelSource::kModelPrediction) return;
  labels.source = b == Branch::kText ? LabelSource::kTextBranch : LabelSource::kVisualBranch;
}

}  // namespace

BranchPass refresh_branch(BranchState& state, const EmbeddingSet& visual,
                          const ClassCatalog& catalog, const RunConfig& cfg) {
  const std::size_t m = catalog.classes();
  const EmbeddingSet& texts = branch_texts(state.branch, catalog);
  BranchPass pass;

  if (state.branch == Branch::kText) {
    const EmbeddingSet adapted = adapter_forward(state.adapter, texts);
    state.basis = compute_text_basis(adapted, ProjectionVariant::kP2);
    const EmbeddingSet text_hat = project(state.basis, adapted);
    const EmbeddingSet visual_hat = project(state.basis, visual);
    pass.labels = label_projected(state.basis, visual_hat, text_hat, cfg.labelprop());
    pass.logits = cosine_logits(visual_hat, text_hat, cfg.logit_scale);
    state.classifier = text_hat;
  } else {
    state.basis = compute_text_basis(l2_normalize(texts), ProjectionVariant::kP2);
    const EmbeddingSet text_hat = project(state.basis, texts);
    const EmbeddingSet visual_hat = adapt_and_project(state.adapter, visual, &state.basis);
    pass.labels = label_projected(state.basis, visual_hat, text_hat, cfg.labelprop());
    const ClassCenters centers = class_centers(visual_hat, pass.labels.labels, m, text_hat);
    state.classifier = centers.as_embeddings();
    pass.logits = cosine_logits(visual_hat, state.classifier, cfg.logit_scale);
  }
  tag_source(pass.labels, state.branch);
  state.last_labels = pass.labels;
  return pass;
}

EpochOutcome run_epoch(BranchState& state, const EmbeddingSet& visual, const ClassCatalog& catalog,
                       const PseudoLabelSet& shared, const RunConfig& cfg, std::size_t epoch,
                       std::size_t step_budget) {
  const std::size_t n = visual.rows();
  require(shared.size() == n, ErrorCode::kValidation, "shared labels do not match image count");
  require(state.classifier.rows() == catalog.classes(), ErrorCode::kValidation,
          "branch must be refreshed before training");

  std::vector<std::size_t> agreed;
  for (std::size_t j = 0; j < n; ++j) {
    if (!shared.agreement_mask || (*shared.agreement_mask)[j]) agreed.push_back(j);
  }

  EpochOutcome out;
  const std::size_t batch = cfg.resolved_batch_size(catalog.classes());
  const double floor = std::max(0.01 * static_cast<double>(n), static_cast<double>(batch));
  if (static_cast<double>(agreed.size()) < floor) {
    out.skipped = true;
    out.warning = "epoch " + std::to_string(epoch) + " " + std::string(branch_name(state.branch)) +
                  " branch: " + std::to_string(agreed.size()) + " agreed samples below " +
                  std::to_string(static_cast<std::size_t>(std::ceil(floor))) +
                  "; updates skipped";
  } else if (step_budget > 0) {
    std::seed_seq seq{cfg.seed, static_cast<std::uint64_t>(epoch),
                      static_cast<std::uint64_t>(state.branch)};
    std::mt19937_64 rng(seq);
    std::shuffle(agreed.begin(), agreed.end(), rng);

    const EmbeddingSet& texts = branch_texts(state.branch, catalog);
    const EmbeddingSet visual_hat =
        state.branch == Branch::kText ? project(state.basis, visual) : EmbeddingSet{};
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < agreed.size() && out.steps < step_budget; start += batch) {
      const std::span<const std::size_t> rows(agreed.data() + start,
                                              std::min(batch, agreed.size() - start));
      std::vector<std::size_t> targets;
      for (std::size_t j : rows) targets.push_back(shared.labels[j]);
      const std::vector<bool> all(rows.size(), true);

      LossAndGrad lg;
      AdapterGrads grads;
      if (state.branch == Branch::kText) {
        const EmbeddingSet partner = gather_rows(visual_hat, rows);
        const EmbeddingSet text_hat = adapt_and_project(state.adapter, texts, &state.basis);
        lg = ce_loss_and_grads(cosine_logits(partner, text_hat, cfg.logit_scale), targets, all);
        grads = backprop_to_adapter(state.adapter, texts, lg.dlogits, partner, cfg.logit_scale,
                                    TrainableSide::kColumns, &state.basis);
      } else {
        const EmbeddingSet inputs = gather_rows(visual, rows);
        const EmbeddingSet batch_hat = adapt_and_project(state.adapter, inputs, &state.basis);
        lg = ce_loss_and_grads(cosine_logits(batch_hat, state.classifier, cfg.logit_scale),
                               targets, all);
        grads = backprop_to_adapter(state.adapter, inputs, lg.dlogits, state.classifier,
                                    cfg.logit_scale, TrainableSide::kRows, &state.basis);
      }
      sgd_step(state.adapter, grads, state.optimizer);
      loss_sum += lg.loss;
      ++out.steps;
    }
    if (out.steps > 0) out.mean_loss = loss_sum / static_cast<double>(out.steps);
  }

  BranchPass pass = refresh_branch(state, visual, catalog, cfg);
  out.fresh_labels = std::move(pass.labels);
  out.logits = std::move(pass.logits);
  return out;
}

PseudoLabelSet share_labels(const PseudoLabelSet& text_labels, const PseudoLabelSet& visual_labels) {
  const std::size_t n = text_labels.size();
  require(visual_labels.size() == n, ErrorCode::kValidation, "label sets differ in length");
  PseudoLabelSet out;
  out.source = LabelSource::kAgreed;
  out.labels.resize(n);
  out.confidence.resize(n);
  std::vector<bool> mask(n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t a = text_labels.labels[j];
    const std::size_t b = visual_labels.labels[j];
    mask[j] = a == b;
    out.labels[j] = std::min(a, b);
    const double ca = j < text_labels.confidence.size() ? text_labels.confidence[j] : 0.0;
    const double cb = j < visual_labels.confidence.size() ? visual_labels.confidence[j] : 0.0;
    out.confidence[j] = mask[j] ? std::min(ca, cb) : 0.0;
  }
  out.agreement_mask = std::move(mask);
  return out;
}

namespace {

void softmax_rows(Matrix& logits) {
  for (std::size_t j = 0; j < logits.rows(); ++j) {
    auto row = logits.row(j);
    const double peak = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double& v : row) {
      v = std::exp(v - peak);
      z += v;
    }
    for (double& v : row) v /= z;
  }
}

}  // namespace

Inference ensemble(const Matrix& text_logits, const Matrix& visual_logits) {
  require(text_logits.rows() == visual_logits.rows() && text_logits.cols() == visual_logits.cols(),
          ErrorCode::kValidation, "branch logits differ in shape");
  Matrix a = text_logits;
  Matrix b = visual_logits;
  softmax_rows(a);
  softmax_rows(b);
  Inference out;
  out.probabilities = Matrix(a.rows(), a.cols());
  out.predictions.resize(a.rows());
  for (std::size_t j = 0; j < a.rows(); ++j) {
    auto p = out.probabilities.row(j);
    std::size_t best = 0;
    for (std::size_t i = 0; i < a.cols(); ++i) {
      p[i] = 0.5 * (a(j, i) + b(j, i));
      if (p[i] > p[best]) best = i;
    }
    out.predictions[j] = best;
  }
  return out;
}

Inference infer(const BranchState& text, const BranchState& visual, const EmbeddingSet& x,
                const RunConfig& cfg) {
  require(x.dims() == text.adapter.dims() && x.dims() == visual.adapter.dims(),
          ErrorCode::kValidation,
          "inference embeddings have " + std::to_string(x.dims()) + " dims, branches expect " +
              std::to_string(text.adapter.dims()));
  const EmbeddingSet unit = l2_normalize(x);
  const Matrix text_logits =
      cosine_logits(project(text.basis, unit), text.classifier, cfg.logit_scale);
  const Matrix visual_logits = cosine_logits(adapt_and_project(visual.adapter, unit, &visual.basis),
                                             visual.classifier, cfg.logit_scale);
  return ensemble(text_logits, visual_logits);
}

namespace {

std::optional<double> masked_accuracy(const PseudoLabelSet& labels, const LabelVector& gt) {
  std::size_t hits = 0;
  std::size_t count = 0;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (labels.agreement_mask && !(*labels.agreement_mask)[j]) continue;
    ++count;
    if (static_cast<std::int64_t>(labels.labels[j]) == gt.values[j]) ++hits;
  }
  if (count == 0) return std::nullopt;
  return static_cast<double>(hits) / static_cast<double>(count);
}

}  // namespace

SelfTrainingRun run_self_training(const EmbeddingSet& visual_in, const ClassCatalog& catalog,
                     const RunConfig& cfg, const std::optional<LabelVector>& eval_labels) {
  validate(visual_in);
  validate(catalog);
  validate(cfg);
  require(visual_in.dims() == catalog.single_template.dims(), ErrorCode::kValidation,
          "image and text embeddings differ in dims");
  const EmbeddingSet visual = l2_normalize(visual_in);
  const std::size_t n = visual.rows();
  const std::size_t m = catalog.classes();
  if (eval_labels) {
    require(eval_labels->size() == n, ErrorCode::kValidation, "eval labels do not match images");
    validate(*eval_labels, m);
  }
  auto accuracy = [&](std::span<const std::size_t> preds) -> std::optional<double> {
    if (!eval_labels) return std::nullopt;
    return top1_accuracy(preds, *eval_labels);
  };

  SelfTrainingRun run;
  run.report.zero_shot_single =
      accuracy(nearest_text_labels(visual, l2_normalize(catalog.single_template), 1.0).labels);
  run.report.zero_shot_multi =
      accuracy(nearest_text_labels(visual, l2_normalize(catalog.best_template()), 1.0).labels);

  run.text = make_branch(Branch::kText, visual.dims(), cfg);
  run.visual = make_branch(Branch::kVisual, visual.dims(), cfg);
  const BranchPass boot_text = refresh_branch(run.text, visual, catalog, cfg);
  const BranchPass boot_visual = refresh_branch(run.visual, visual, catalog, cfg);
  run.shared = share_labels(boot_text.labels, boot_visual.labels);

  auto record = [&](std::size_t epoch, std::size_t steps, double loss_t, double loss_v,
                    const PseudoLabelSet& lt, const PseudoLabelSet& lv, const Matrix& logits_t,
                    const Matrix& logits_v) {
    const Inference ens = ensemble(logits_t, logits_v);
    run.predictions = ens.predictions;
    EpochRow row;
    row.epoch = epoch;
    row.steps = steps;
    row.loss_text = loss_t;
    row.loss_visual = loss_v;
    row.agreement_fraction =
        static_cast<double>(run.shared.masked_count()) / static_cast<double>(n);
    row.pseudo_label_accuracy_text = accuracy(lt.labels);
    row.pseudo_label_accuracy_visual = accuracy(lv.labels);
    if (eval_labels) row.agreed_accuracy = masked_accuracy(run.shared, *eval_labels);
    row.ensemble_accuracy = accuracy(ens.predictions);
    run.report.per_epoch.push_back(row);
  };
  record(0, 0, 0.0, 0.0, boot_text.labels, boot_visual.labels, boot_text.logits, boot_visual.logits);

  std::size_t steps = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs && steps < cfg.max_iterations; ++epoch) {
    const std::size_t budget = cfg.max_iterations - steps;
    EpochOutcome ot = run_epoch(run.text, visual, catalog, run.shared, cfg, epoch, budget);
    EpochOutcome ov = run_epoch(run.visual, visual, catalog, run.shared, cfg, epoch, budget);
    for (const EpochOutcome* o : {&ot, &ov}) {
      if (o->warning) run.report.warnings.push_back(*o->warning);
    }
    steps += std::max(ot.steps, ov.steps);
    run.shared = share_labels(ot.fresh_labels, ov.fresh_labels);
    record(epoch, steps, ot.mean_loss, ov.mean_loss, ot.fresh_labels, ov.fresh_labels, ot.logits,
           ov.logits);
  }
  run.report.total_steps = steps;
  run.report.finalize();
  return run;
}

void save_checkpoint(const std::filesystem::path& dir, const SelfTrainingRun& run, const RunConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorCode::kIo, "cannot create " + dir.string());
  save_adapter(run.text.adapter, dir / "text_adapter.rclp");
  save_adapter(run.visual.adapter, dir / "visual_adapter.rclp");
  save_basis(run.text.basis, dir / "text_basis.rclp");
  save_basis(run.visual.basis, dir / "visual_basis.rclp");
  save_container(run.text.classifier, dir / "text_classifier.rclp");
  save_container(run.visual.classifier, dir / "visual_centers.rclp");

  auto write_text = [&](const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
    out << text;
  };
  write_text(dir / "config.json", canonical_json(to_json(cfg)));
  std::ostringstream csv;
  write_report_csv(run.report, csv);
  write_text(dir / "report.csv", csv.str());
  write_text(dir / "report.json", canonical_json(report_to_json(run.report)));
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "config.json");
  require(static_cast<bool>(in), ErrorCode::kIo, "missing " + (dir / "config.json").string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("bad config.json: ") + e.what());
  }
  Checkpoint cp;
  cp.config = run_config_from_json(j);
  auto load_branch = [&](Branch b, const char* prefix, const char* classifier) {
    BranchState s;
    s.branch = b;
    s.adapter = load_adapter(dir / (std::string(prefix) + "_adapter.rclp"));
    s.basis = load_basis(dir / (std::string(prefix) + "_basis.rclp"));
    s.classifier = load_embeddings(dir / classifier);
    s.optimizer = OptimizerState::for_adapter(s.adapter, cp.config.lr, cp.config.momentum,
                                              cp.config.weight_decay);
    require(s.basis.source_dims == s.adapter.dims() && s.classifier.dims() == s.adapter.dims(),
            ErrorCode::kValidation, "checkpoint parts disagree on dims");
    return s;
  };
  cp.text = load_branch(Branch::kText, "text", "text_classifier.rclp");
  cp.visual = load_branch(Branch::kVisual, "visual", "visual_centers.rclp");
  return cp;
}

}  // namespace rclp
