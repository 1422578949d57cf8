// rclp: batch front end for projection, label propagation, self-training,
// evaluation and the synthetic benchmark.
//
// Exit codes: 0 success, 1 computation error, 2 input error (bad flags, files,
// formats or values). Errors are reported as one JSON object on stderr.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "rclp/error.hpp"
#include "rclp/harness.hpp"
#include "rclp/labelprop.hpp"
#include "rclp/parallel.hpp"
#include "rclp/projection.hpp"
#include "rclp/selftrain.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitComputation = 1;
constexpr int kExitInput = 2;

bool is_input_error(rclp::ErrorCode code) {
  switch (code) {
    case rclp::ErrorCode::kFormat:
    case rclp::ErrorCode::kValidation:
    case rclp::ErrorCode::kIo:
      return true;
    default:
      return false;
  }
}

void report_error(std::string_view code, const std::string& message, json extra = json::object()) {
  extra["error"] = code;
  extra["message"] = message;
  std::cerr << extra.dump() << '\n';
}

/// RunConfig fields as optional overrides; only flags actually given are applied.
struct RunFlags {
  std::optional<std::string> config_path;
  std::optional<std::string> metadata_path;
  std::optional<double> lr, momentum, weight_decay, alpha, gamma, cg_tol, logit_scale;
  std::optional<std::size_t> batch_size, max_iterations, max_epochs, k, cg_max_iter;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;

  void add_labelprop(CLI::App& app) {
    app.add_option("--alpha", alpha, "Propagation strength in [0, 1); 0 uses nearest-text labels");
    app.add_option("--k", k, "Neighbours kept per node");
    app.add_option("--gamma", gamma, "Exponent applied to kept affinities");
    app.add_option("--cg-tol", cg_tol, "Relative residual tolerance of the CG solver");
    app.add_option("--cg-max-iter", cg_max_iter, "CG iteration cap per class column");
    app.add_option("--logit-scale", logit_scale, "Temperature applied to cosine logits");
  }

  void add_training(CLI::App& app) {
    app.add_option("--lr", lr, "SGD learning rate");
    app.add_option("--momentum", momentum, "SGD momentum");
    app.add_option("--weight-decay", weight_decay, "L2 weight decay");
    app.add_option("--batch-size", batch_size, "Mini-batch size; 0 picks 64 (32 above 200 classes)");
    app.add_option("--max-iterations", max_iterations, "Total optimizer step cap");
    app.add_option("--max-epochs", max_epochs, "Epoch cap");
    app.add_option("--seed", seed, "Shuffling seed");
    app.add_option("--mode", mode, "transductive or inductive");
  }

  void add_sources(CLI::App& app) {
    app.add_option("--config", config_path, "RunConfig JSON; flags override its values");
    app.add_option("--metadata", metadata_path, "Exporter metadata JSON; supplies logit_scale");
  }

  /// Defaults, then metadata, then the config file, then flags.
  rclp::RunConfig resolve(rclp::RunConfig cfg = {}) const {
    if (metadata_path) {
      const json meta = read_json(*metadata_path);
      if (meta.contains("logit_scale")) {
        cfg = rclp::run_config_from_json(json{{"logit_scale", meta["logit_scale"]}}, cfg);
      }
    }
    if (config_path) cfg = rclp::run_config_from_json(read_json(*config_path), cfg);
    if (lr) cfg.lr = *lr;
    if (momentum) cfg.momentum = *momentum;
    if (weight_decay) cfg.weight_decay = *weight_decay;
    if (batch_size) cfg.batch_size = *batch_size;
    if (max_iterations) cfg.max_iterations = *max_iterations;
    if (max_epochs) cfg.max_epochs = *max_epochs;
    if (alpha) cfg.alpha = *alpha;
    if (k) cfg.k = *k;
    if (gamma) cfg.gamma = *gamma;
    if (cg_tol) cfg.cg_tol = *cg_tol;
    if (cg_max_iter) cfg.cg_max_iter = *cg_max_iter;
    if (logit_scale) cfg.logit_scale = *logit_scale;
    if (seed) cfg.seed = *seed;
    if (mode) cfg.mode = rclp::parse_mode(*mode);
    rclp::validate(cfg);
    return cfg;
  }

  static json read_json(const std::string& path) {
    std::ifstream in(path);
    rclp::require(static_cast<bool>(in), rclp::ErrorCode::kIo, "cannot open " + path);
    try {
      return json::parse(in);
    } catch (const json::exception& e) {
      rclp::fail(rclp::ErrorCode::kFormat, path + ": " + e.what());
    }
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  rclp::require(static_cast<bool>(out), rclp::ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  rclp::require(static_cast<bool>(out), rclp::ErrorCode::kIo, "failed writing " + path.string());
}

rclp::LabelVector to_label_vector(std::span<const std::size_t> labels) {
  rclp::LabelVector v;
  v.values.reserve(labels.size());
  for (std::size_t l : labels) v.values.push_back(static_cast<std::int64_t>(l));
  return v;
}

std::string confidence_csv(const rclp::PseudoLabelSet& labels, const rclp::EmbeddingSet& visual) {
  std::ostringstream out;
  out << "id,label,confidence,source\n" << std::setprecision(10);
  for (std::size_t j = 0; j < labels.size(); ++j) {
    out << visual.ids[j] << ',' << labels.labels[j] << ',' << labels.confidence[j] << ','
        << rclp::source_name(labels.source) << '\n';
  }
  return out.str();
}

const rclp::EmbeddingSet& pick_template(const rclp::ClassCatalog& catalog, const std::string& which) {
  if (which == "single") return catalog.single_template;
  if (which == "multi") {
    rclp::require(catalog.multi_template.has_value(), rclp::ErrorCode::kValidation,
                  "catalog has no multi-template embeddings");
    return *catalog.multi_template;
  }
  rclp::fail(rclp::ErrorCode::kValidation, "unknown template '" + which + "' (single|multi)");
}

json stats_json(const rclp::AlignmentStats& s) {
  return {{"mean_text_text_cos", s.mean_text_text_cos},
          {"mean_intra_class_visual_text_cos", s.mean_intra_class_visual_text_cos},
          {"mean_inter_class_visual_text_cos", s.mean_inter_class_visual_text_cos}};
}

std::optional<double> labelled_accuracy(std::span<const std::size_t> preds,
                                        const std::optional<std::string>& gt_path) {
  if (!gt_path) return std::nullopt;
  return rclp::top1_accuracy(preds, rclp::load_labels(*gt_path));
}

struct ProjectArgs {
  std::string embeddings, catalog, variant = "P2", templ = "single", out;
  std::optional<std::string> labels, basis_out;
};

int cmd_project(const ProjectArgs& a) {
  const rclp::EmbeddingSet visual = rclp::l2_normalize(rclp::load_embeddings(a.embeddings));
  const rclp::ClassCatalog catalog = rclp::load_catalog(a.catalog);
  const rclp::EmbeddingSet text = rclp::l2_normalize(pick_template(catalog, a.templ));
  rclp::require(visual.dims() == text.dims(), rclp::ErrorCode::kValidation,
                "image and text embeddings differ in dims");
  const rclp::ProjectionBasis basis = rclp::compute_text_basis(text, rclp::parse_variant(a.variant));
  const rclp::EmbeddingSet projected = rclp::project(basis, visual);
  rclp::save_container(projected, a.out);
  if (a.basis_out) rclp::save_basis(basis, *a.basis_out);

  json out = {{"variant", rclp::variant_name(basis.variant)},
              {"rank", basis.rank()},
              {"rows", projected.rows()},
              {"dims", projected.dims()}};
  if (a.labels) {
    const rclp::LabelVector labels = rclp::load_labels(*a.labels);
    rclp::validate(labels, catalog.classes());
    rclp::require(labels.size() == visual.rows(), rclp::ErrorCode::kValidation,
                  "labels do not match image rows");
    out["raw"] = stats_json(rclp::alignment_stats(visual, text, labels));
    out["projected"] =
        stats_json(rclp::alignment_stats(projected, rclp::project(basis, text), labels));
  }
  std::cout << out.dump(2) << '\n';
  return 0;
}

struct PropagateArgs {
  std::string embeddings, catalog, variant = "P2", templ = "single", out;
  std::optional<std::string> confidence_out, debug_z, labels;
  RunFlags run;
};

int cmd_propagate(const PropagateArgs& a) {
  const rclp::RunConfig cfg = a.run.resolve();
  const rclp::EmbeddingSet visual = rclp::l2_normalize(rclp::load_embeddings(a.embeddings));
  const rclp::ClassCatalog catalog = rclp::load_catalog(a.catalog);
  const rclp::EmbeddingSet text = rclp::l2_normalize(pick_template(catalog, a.templ));
  rclp::require(visual.dims() == text.dims(), rclp::ErrorCode::kValidation,
                "image and text embeddings differ in dims");
  const rclp::ProjectionBasis basis = rclp::compute_text_basis(text, rclp::parse_variant(a.variant));

  std::ostringstream debug;
  const rclp::PseudoLabelSet labels =
      rclp::label_projected(basis, rclp::project(basis, visual), rclp::project(basis, text),
                            cfg.labelprop(), a.debug_z ? &debug : nullptr);
  rclp::save_container(to_label_vector(labels.labels), a.out);
  if (a.confidence_out) write_text(*a.confidence_out, confidence_csv(labels, visual));
  if (a.debug_z) write_text(*a.debug_z, debug.str());

  json out = {{"source", rclp::source_name(labels.source)},
              {"images", labels.size()},
              {"classes", catalog.classes()}};
  if (auto acc = labelled_accuracy(labels.labels, a.labels)) out["accuracy"] = *acc;
  std::cout << out.dump(2) << '\n';
  return 0;
}

struct AdaptArgs {
  std::string embeddings, catalog, out_dir;
  std::optional<std::string> labels, predictions, infer_embeddings, infer_out;
  RunFlags run;
};

int cmd_adapt(const AdaptArgs& a) {
  const rclp::RunConfig cfg = a.run.resolve();
  rclp::require(!a.infer_embeddings || a.infer_out, rclp::ErrorCode::kValidation,
                "--infer-embeddings needs --infer-out");
  const rclp::EmbeddingSet visual = rclp::load_embeddings(a.embeddings);
  const rclp::ClassCatalog catalog = rclp::load_catalog(a.catalog);
  std::optional<rclp::LabelVector> gt;
  if (a.labels) gt = rclp::load_labels(*a.labels);

  const rclp::SelfTrainingRun run = rclp::run_self_training(visual, catalog, cfg, gt);
  rclp::save_checkpoint(a.out_dir, run, cfg);
  if (a.predictions) rclp::save_container(to_label_vector(run.predictions), *a.predictions);
  for (const std::string& w : run.report.warnings) std::clog << "warning: " << w << '\n';

  json out = rclp::report_to_json(run.report);
  out.erase("per_epoch");
  out["epochs"] = run.report.per_epoch.size();
  if (a.infer_embeddings) {
    const rclp::EmbeddingSet held_out = rclp::load_embeddings(*a.infer_embeddings);
    const rclp::Inference inf = rclp::infer(run.text, run.visual, held_out, cfg);
    rclp::save_container(to_label_vector(inf.predictions), *a.infer_out);
    out["inferred_rows"] = inf.predictions.size();
  }
  std::cout << out.dump(2) << '\n';
  return 0;
}

struct EvaluateArgs {
  std::string pred, gt;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const rclp::LabelVector pred = rclp::load_labels(a.pred);
  const rclp::LabelVector gt = rclp::load_labels(a.gt);
  std::vector<std::size_t> preds;
  preds.reserve(pred.size());
  for (std::int64_t v : pred.values) {
    rclp::require(v >= 0, rclp::ErrorCode::kValidation, "predictions contain unlabeled rows");
    preds.push_back(static_cast<std::size_t>(v));
  }
  const double acc = rclp::top1_accuracy(preds, gt);
  std::cout << json{{"accuracy", acc}, {"count", preds.size()}}.dump(2) << '\n';
  return 0;
}

struct BenchArgs {
  std::string out_dir;
  rclp::SynthSpec spec;
  RunFlags run;
};

int cmd_bench_synth(BenchArgs a) {
  // One seed drives both the generator and the run; the benchmark default is 7.
  rclp::RunConfig base;
  base.seed = rclp::SynthSpec{}.seed;
  const rclp::RunConfig cfg = a.run.resolve(base);
  a.spec.seed = cfg.seed;
  const rclp::SynthData data = rclp::generate_synth(a.spec);
  const fs::path dir = a.out_dir;
  fs::create_directories(dir);
  rclp::save_container(data.visual, dir / "visual.rclp");
  rclp::save_container(data.catalog, dir / "catalog.rclp");
  rclp::save_container(data.gt, dir / "labels.rclp");

  // Standalone projection + label propagation on the single-template texts.
  const rclp::EmbeddingSet& text = data.catalog.single_template;
  const rclp::ProjectionBasis basis = rclp::compute_text_basis(text, rclp::ProjectionVariant::kP2);
  const rclp::PseudoLabelSet lp = rclp::label_projected(
      basis, rclp::project(basis, data.visual), rclp::project(basis, text), cfg.labelprop());

  const rclp::SelfTrainingRun run = rclp::run_self_training(data.visual, data.catalog, cfg, data.gt);
  rclp::save_checkpoint(dir / "checkpoint", run, cfg);

  json summary = rclp::report_to_json(run.report);
  summary.erase("per_epoch");
  summary["label_propagation_accuracy"] = rclp::top1_accuracy(lp.labels, data.gt);
  summary["spec"] = {{"classes", a.spec.classes},     {"per_class", a.spec.per_class},
                     {"dims", a.spec.dims},           {"sigma_v", a.spec.sigma_v},
                     {"sigma_t", a.spec.sigma_t},     {"delta", a.spec.delta},
                     {"templates", a.spec.templates}, {"seed", a.spec.seed}};
  write_text(dir / "summary.json", rclp::canonical_json(summary));
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int default_threads() {
  const char* env = std::getenv("RCLP_THREADS");
  if (env == nullptr || *env == '\0') return 0;
  try {
    std::size_t used = 0;
    const int n = std::stoi(env, &used);
    if (used == std::string_view(env).size() && n >= 0) return n;
  } catch (const std::exception&) {
  }
  rclp::fail(rclp::ErrorCode::kValidation, std::string("RCLP_THREADS is not a count: ") + env);
}

int run(int argc, char** argv) {
  CLI::App app{"Source-free realignment and self-training for vision-language embeddings"};
  app.require_subcommand(1);
  int threads = default_threads();
  app.add_option("--threads", threads, "Worker cap; 0 uses every core (default: $RCLP_THREADS)");

  ProjectArgs pa;
  CLI::App* project = app.add_subcommand("project", "Project images into the text-span subspace");
  project->add_option("--embeddings", pa.embeddings, "Image embeddings container")->required();
  project->add_option("--catalog", pa.catalog, "Class catalog container")->required();
  project->add_option("--variant", pa.variant, "P0, P1 or P2");
  project->add_option("--template", pa.templ, "single or multi");
  project->add_option("--labels", pa.labels, "Ground truth; prints alignment statistics");
  project->add_option("--out", pa.out, "Projected embeddings container")->required();
  project->add_option("--basis-out", pa.basis_out, "Write the projection basis here");

  PropagateArgs pp;
  CLI::App* propagate = app.add_subcommand("propagate", "Pseudo labels by label propagation");
  propagate->add_option("--embeddings", pp.embeddings, "Image embeddings container")->required();
  propagate->add_option("--catalog", pp.catalog, "Class catalog container")->required();
  propagate->add_option("--variant", pp.variant, "P0, P1 or P2");
  propagate->add_option("--template", pp.templ, "single or multi");
  propagate->add_option("--out", pp.out, "Pseudo label container")->required();
  propagate->add_option("--confidence-out", pp.confidence_out, "Per-image CSV of label and confidence");
  propagate->add_option("--debug-z", pp.debug_z, "Dump the first ten image rows of Z here");
  propagate->add_option("--labels", pp.labels, "Ground truth; adds accuracy to the summary");
  pp.run.add_sources(*propagate);
  pp.run.add_labelprop(*propagate);

  AdaptArgs aa;
  CLI::App* adapt = app.add_subcommand("adapt", "Two-branch self-training");
  adapt->add_option("--embeddings", aa.embeddings, "Image embeddings container")->required();
  adapt->add_option("--catalog", aa.catalog, "Class catalog container")->required();
  adapt->add_option("--out-dir", aa.out_dir, "Checkpoint directory")->required();
  adapt->add_option("--labels", aa.labels, "Ground truth for per-epoch evaluation");
  adapt->add_option("--predictions", aa.predictions, "Final ensemble predictions container");
  adapt->add_option("--infer-embeddings", aa.infer_embeddings, "Held-out images to classify");
  adapt->add_option("--infer-out", aa.infer_out, "Predictions for --infer-embeddings");
  aa.run.add_sources(*adapt);
  aa.run.add_labelprop(*adapt);
  aa.run.add_training(*adapt);

  EvaluateArgs ea;
  CLI::App* evaluate = app.add_subcommand("evaluate", "Top-1 accuracy of predictions");
  evaluate->add_option("--pred", ea.pred, "Predicted label container")->required();
  evaluate->add_option("--gt", ea.gt, "Ground-truth label container")->required();

  BenchArgs ba;
  CLI::App* bench = app.add_subcommand("bench-synth", "Synthetic misaligned-modality benchmark");
  bench->add_option("--out-dir", ba.out_dir, "Output directory")->required();
  bench->add_option("--classes", ba.spec.classes, "Number of classes");
  bench->add_option("--per-class", ba.spec.per_class, "Images per class");
  bench->add_option("--dims", ba.spec.dims, "Embedding dimension");
  bench->add_option("--sigma-v", ba.spec.sigma_v, "Per-coordinate image noise");
  bench->add_option("--sigma-t", ba.spec.sigma_t, "Per-coordinate text noise");
  bench->add_option("--delta", ba.spec.delta, "Length of the shared text offset");
  bench->add_option("--templates", ba.spec.templates, "Templates averaged into the multi catalog");
  ba.run.add_sources(*bench);
  ba.run.add_labelprop(*bench);
  ba.run.add_training(*bench);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage_error", e.what());
    return kExitInput;
  }

  rclp::require(threads >= 0, rclp::ErrorCode::kValidation, "--threads must be nonnegative");
  rclp::set_num_threads(threads);

  if (*project) return cmd_project(pa);
  if (*propagate) return cmd_propagate(pp);
  if (*adapt) return cmd_adapt(aa);
  if (*evaluate) return cmd_evaluate(ea);
  return cmd_bench_synth(ba);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const rclp::SolverError& e) {
    report_error(rclp::error_code_name(e.code()), e.what(), {{"worst_residual", e.worst_residual()}});
    return kExitComputation;
  } catch (const rclp::Error& e) {
    report_error(rclp::error_code_name(e.code()), e.what());
    return is_input_error(e.code()) ? kExitInput : kExitComputation;
  } catch (const std::filesystem::filesystem_error& e) {
    report_error("io_error", e.what());
    return kExitInput;
  } catch (const std::exception& e) {
    report_error("internal_error", e.what());
    return kExitComputation;
  }
}
