#pragma once

// Experiment commands shared by the CLI and the acceptance suite. Every
// command reads and writes files under a run directory with a fixed layout
// (see RunLayout); individual paths can be overridden by the caller.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rtify/checkpoint.hpp"
#include "rtify/config.hpp"

namespace rtify::app {

namespace fs = std::filesystem;

struct RunLayout {
  fs::path root;

  fs::path dataset() const { return root / "dataset"; }
  fs::path reference_train() const { return root / "reference_train.csv"; }
  fs::path reference_eval() const { return root / "reference_eval.csv"; }
  fs::path backbone() const { return root / "backbone.ckpt"; }
  fs::path rtify() const { return root / "rtify.ckpt"; }
  fs::path wongwang() const { return root / "ww.ckpt"; }
  fs::path metrics() const { return root / "metrics.json"; }
  fs::path eval_trials() const { return root / "eval_trials.csv"; }
  fs::path eval_histograms() const { return root / "eval_histograms.csv"; }
  fs::path export_dir() const { return root / "export"; }
};

stimuli::Dataset gen_stimuli(const ExperimentConfig& cfg, const fs::path& dataset_dir);

/// Synthetic reference RTs for every condition: a training sample and an
/// independent evaluation sample.
void simulate_reference(const ExperimentConfig& cfg, const fs::path& train_csv, const fs::path& eval_csv);

struct BackboneOutcome {
  std::vector<backbone::EpochLog> log;
  std::vector<double> final_accuracy;
};

BackboneOutcome train_backbone(const ExperimentConfig& cfg, const fs::path& dataset_dir, const fs::path& ckpt_out,
                               const fs::path& log_csv);

struct FitOutcome {
  std::vector<training::EpochLog> log;
  std::vector<double> initial_mse;  // per condition, training split, final bandwidth
  std::vector<double> final_mse;
};

FitOutcome fit_rt(const ExperimentConfig& cfg, const fs::path& backbone_ckpt, const fs::path& reference_csv,
                  const fs::path& dataset_dir, objectives::FitMode mode, const fs::path& ckpt_out,
                  const fs::path& hist_csv, const fs::path& log_csv);

FitOutcome train_selfpenalty(const ExperimentConfig& cfg, const fs::path& backbone_ckpt, const fs::path& dataset_dir,
                             double lambda, const fs::path& ckpt_out, const fs::path& log_csv);

struct WwOutcome {
  std::vector<wongwang::FitLog> log;
  std::vector<double> initial_mse;
  std::vector<double> final_mse;
};

WwOutcome fit_ww(const ExperimentConfig& cfg, const fs::path& backbone_ckpt, const fs::path& reference_csv,
                 const fs::path& dataset_dir, const fs::path& ckpt_out, const fs::path& hist_csv,
                 const fs::path& log_csv, const std::optional<fs::path>& trajectory_csv);

struct EvalRequest {
  fs::path checkpoint;
  fs::path dataset_dir;
  std::optional<fs::path> reference_eval;   // histogram MSE per condition
  std::optional<fs::path> reference_train;  // needed for the entropy baseline fit
  bool compare_entropy = false;
  std::string split = "test";
  fs::path metrics_out;
  fs::path trials_out;
  fs::path histograms_out;
};

nlohmann::json evaluate(const ExperimentConfig& cfg, const EvalRequest& request);

/// Plot bundle under run_dir/export: one histogram CSV per condition,
/// scatter.csv and summary.json.
nlohmann::json export_bundle(const fs::path& run_dir);

/// Empty when `summary` matches the documented schema, otherwise one message per problem.
std::vector<std::string> validate_summary(const nlohmann::json& summary);

/// Mean-pooled logits of each trace, the static drive for the Wong-Wang head.
std::vector<wongwang::Drive> static_drives(const std::vector<backbone::HiddenTrace>& traces);

/// Backbone parameters from any checkpoint kind (stand-alone or embedded).
diff::ParamSet backbone_params(const Checkpoint& ckpt);

}  // namespace rtify::app
