#pragma once

#include <fstream>
#include <iostream>

#include "baple/experiment.hpp"

namespace baple {

enum class Stage { pretrain, attack, eval, ablate, sweep_targets, export_features, report };

inline std::string_view stage_name(Stage s) {
  static constexpr std::array<std::string_view, 7> names = {"pretrain", "attack",          "eval",  "ablate",
                                                            "sweep-targets", "export-features", "report"};
  return names[static_cast<std::size_t>(s)];
}

// Runtime failure tagged with the pipeline stage that raised it.
class StageError : public Error {
 public:
  StageError(Stage stage, const std::string& what)
      : Error(std::string(stage_name(stage)) + ": " + what), stage_(stage) {}
  Stage stage() const noexcept { return stage_; }

 private:
  Stage stage_;
};

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error("cannot write '" + path.string() + "'");
}

template <class F>
std::string to_text(F&& write) {
  std::ostringstream os;
  write(os);
  return os.str();
}

}  // namespace detail

struct RunOutput {
  std::filesystem::path dir;
  ReportBundle bundle;
};

// Evenly strided subset of the test split, at most `limit` images.
inline std::vector<std::size_t> export_indices(const Dataset& test, int limit) {
  std::vector<std::size_t> out;
  if (limit <= 0 || test.size() == 0) return out;
  const std::size_t n = std::min(test.size(), static_cast<std::size_t>(limit));
  for (std::size_t k = 0; k < n; ++k) out.push_back(k * test.size() / n);
  return out;
}

inline FeatureExport export_for(const Workspace& w, const PipelineResult& r, int limit) {
  std::vector<Image> images;
  std::vector<LabelId> labels;
  for (auto i : export_indices(w.test, limit)) {
    images.push_back(w.test.images[i]);
    labels.push_back(w.test.labels[i]);
  }
  return export_features(r.encoder(w), images, labels, r.trigger ? &r.trigger : nullptr);
}

inline std::string run_markdown(const ExperimentConfig& c, const PipelineResult& r) {
  std::ostringstream md;
  md << "# Run " << r.fingerprint << "\n\n"
     << "- mode: " << mode_name(c.mode) << "\n- seed: " << c.seed << "\n- target: " << c.target
     << "\n- dataset fingerprint: " << r.dataset_fingerprint << "\n\n"
     << "| Method | CA | BA |\n|---|---|---|\n"
     << "| " << method_label(r.mode) << " | " << fmt3(r.report.ca) << " | " << (r.report.ba ? fmt3(*r.report.ba) : "")
     << " |\n\n## Per-class clean accuracy\n\n| class | accuracy |\n|---|---|\n";
  for (std::size_t k = 0; k < r.report.per_class.size(); ++k) md << "| " << k << " | " << fmt3(r.report.per_class[k]) << " |\n";
  for (const auto& w : r.warnings) md << "\nwarning: " << w << '\n';
  return md.str();
}

// out/<fingerprint>/{config.json, checkpoints/, metrics.csv, trace.csv, features.csv, report.md, bundle/}.
// The bundle is written last and is the only place that marks the run complete.
inline RunOutput write_run(const Workspace& w, const ExperimentConfig& c, const PipelineResult& r) {
  RunOutput out;
  out.dir = output_root(c) / r.fingerprint;
  std::filesystem::remove_all(out.dir / "bundle");
  detail::write_text(out.dir / "config.json", effective_config_text(c));
  if (r.attack) save_artifact(*r.attack, out.dir / "checkpoints" / "attack");
  if (r.finetune) save_artifact(r.finetune->encoder, out.dir / "checkpoints" / "encoder");
  save_artifact(r.plan, out.dir / "checkpoints" / "plan");
  const std::vector<MetricsRow> rows{row_of(r, c)};
  detail::write_text(out.dir / "metrics.csv", detail::to_text([&](std::ostream& os) { write_metrics_csv(os, rows); }));
  detail::write_text(out.dir / "trace.csv", detail::to_text([&](std::ostream& os) { write_trace_csv(os, r.trace()); }));
  if (c.export_features) {
    const auto fx = export_for(w, r, c.export_limit);
    detail::write_text(out.dir / "features.csv", detail::to_text([&](std::ostream& os) { write_features_csv(os, fx); }));
  }
  detail::write_text(out.dir / "report.md", run_markdown(c, r));
  out.bundle = {r.fingerprint, r.dataset_fingerprint, "run", "", rows, true};
  save_artifact(out.bundle, out.dir / "bundle");
  return out;
}

inline RunOutput write_table(const ExperimentConfig& c, const std::string& kind, const std::string& axis,
                             const std::vector<MetricsRow>& rows, const std::vector<std::string>& warnings) {
  RunOutput out;
  const std::string fp = fingerprint_of(config_fingerprint(c) + "/" + kind + "/" + axis);
  out.dir = output_root(c) / fp;
  std::filesystem::remove_all(out.dir / "bundle");
  detail::write_text(out.dir / "config.json", effective_config_text(c));
  detail::write_text(out.dir / "metrics.csv", detail::to_text([&](std::ostream& os) { write_long_csv(os, rows); }));
  out.bundle = {fp, dataset_fingerprint(c), kind, axis, rows, true};
  std::string md = render_report({out.bundle}).markdown;
  for (const auto& wmsg : warnings) md += "\nwarning: " + wmsg + "\n";
  detail::write_text(out.dir / "report.md", md);
  save_artifact(out.bundle, out.dir / "bundle");
  return out;
}

// Reconstructs a finished run from its output directory.
struct LoadedRun {
  ExperimentConfig config;
  PipelineResult result;
};

inline LoadedRun load_run(const Workspace& w, const std::filesystem::path& dir) {
  LoadedRun lr;
  lr.config = load_config(dir / "config.json", {});
  auto& r = lr.result;
  r.mode = lr.config.mode;
  r.fingerprint = config_fingerprint(lr.config);
  r.dataset_fingerprint = dataset_fingerprint(lr.config);
  r.plan = load_artifact<PoisonPlan>(dir / "checkpoints" / "plan");
  if (is_finetune(r.mode)) {
    FinetuneResult fr;
    fr.encoder = load_artifact<DualEncoder>(dir / "checkpoints" / "encoder");
    r.finetune = std::move(fr);
    r.finetune_template = lr.config.finetune.template_pattern;
    r.trigger = baseline_trigger(lr.config, r.mode);
  } else {
    r.attack = load_artifact<AttackResult>(dir / "checkpoints" / "attack");
    r.trigger = r.mode == AttackMode::baple ? learned_trigger(*r.attack) : baseline_trigger(lr.config, r.mode);
    if (r.attack->encoder_checksum != parameter_checksum(w.encoder))
      throw FormatError("attack checkpoint was trained against a different encoder");
  }
  r.report = evaluate(r.encoder(w), r.prompts(w), w.test, is_clean(r.mode) ? nullptr : &r.trigger, lr.config.target,
                      lr.config.exclude_true_target);
  r.report.fingerprint = r.fingerprint;
  r.report.seed = lr.config.seed;
  return lr;
}

struct StageRequest {
  Stage stage = Stage::attack;
  ExperimentConfig config;
  std::filesystem::path from;                   // eval/export-features: existing run directory
  std::vector<std::filesystem::path> bundles;  // report inputs
  std::filesystem::path report_out;             // report destination directory
};

inline Workspace workspace_for(const ExperimentConfig& c, Stage s) {
  try {
    return build_workspace(c);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(s, std::string("workspace: ") + e.what());
  }
}

// Runs one stage and returns the path of its main output. Configuration
// errors propagate as ConfigError; everything else becomes a StageError.
inline std::filesystem::path run_experiment(const StageRequest& req) {
  const auto& c = req.config;
  try {
    switch (req.stage) {
      case Stage::pretrain: {
        const Workspace w = workspace_for(c, req.stage);
        const auto dir = output_root(c) / ("encoder-" + w.key);
        save_artifact(w.encoder, dir / "checkpoints" / "encoder");
        detail::write_text(dir / "config.json", effective_config_text(c));
        std::ostringstream m;
        m << "zero_shot_accuracy," << fmt_full(w.encoder.zero_shot_accuracy) << '\n';
        detail::write_text(dir / "metrics.csv", "metric,value\n" + m.str());
        return dir / "checkpoints" / "encoder";
      }
      case Stage::attack: {
        const Workspace w = workspace_for(c, req.stage);
        return write_run(w, c, run_pipeline(w, c)).dir;
      }
      case Stage::eval: {
        if (req.from.empty()) throw ConfigError("--from", "eval needs a run directory");
        if (!std::filesystem::exists(req.from / "checkpoints")) throw StageError(req.stage, "no checkpoints under '" + req.from.string() + "'");
        const ExperimentConfig rc = load_config(req.from / "config.json", {});
        const Workspace w = workspace_for(rc, req.stage);
        const LoadedRun lr = load_run(w, req.from);
        const std::vector<MetricsRow> rows{row_of(lr.result, lr.config)};
        detail::write_text(req.from / "eval.csv", detail::to_text([&](std::ostream& os) { write_metrics_csv(os, rows); }));
        return req.from / "eval.csv";
      }
      case Stage::export_features: {
        std::filesystem::path dir;
        FeatureExport fx;
        if (!req.from.empty()) {
          const ExperimentConfig rc = load_config(req.from / "config.json", {});
          const Workspace w = workspace_for(rc, req.stage);
          const LoadedRun lr = load_run(w, req.from);
          fx = export_for(w, lr.result, rc.export_limit);
          dir = req.from;
        } else {
          const Workspace w = workspace_for(c, req.stage);
          const auto r = run_pipeline(w, c);
          dir = write_run(w, c, r).dir;
          fx = export_for(w, r, c.export_limit);
        }
        detail::write_text(dir / "features.csv", detail::to_text([&](std::ostream& os) { write_features_csv(os, fx); }));
        return dir / "features.csv";
      }
      case Stage::ablate: {
        const Workspace w = workspace_for(c, req.stage);
        const auto grid = grid_from_config(c);
        const auto table = run_ablation(w, grid, c);
        return write_table(c, "ablation", grid.axis, table.rows, table.warnings).dir;
      }
      case Stage::sweep_targets: {
        const Workspace w = workspace_for(c, req.stage);
        const auto sweep = run_target_sweep(w, c, c.repeat_seeds);
        return write_table(c, "sweep", "target_class", sweep.rows, sweep.warnings).dir;
      }
      case Stage::report: {
        if (req.bundles.empty()) throw ConfigError("bundles", "report needs at least one bundle directory");
        std::vector<ReportBundle> bundles;
        for (const auto& b : req.bundles) {
          const auto dir = std::filesystem::exists(b / "bundle") ? b / "bundle" : b;
          bundles.push_back(load_artifact<ReportBundle>(dir));
        }
        const auto rendered = render_report(bundles);
        const auto out = req.report_out.empty() ? output_root(c) / "report" : req.report_out;
        detail::write_text(out / "report.md", rendered.markdown);
        detail::write_text(out / "report.csv", rendered.csv);
        return out;
      }
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(req.stage, e.what());
  } catch (const std::exception& e) {
    throw StageError(req.stage, e.what());
  }
  return {};
}

}  // namespace baple
