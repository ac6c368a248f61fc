#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "rtify/backbone.hpp"
#include "rtify/dataset.hpp"
#include "rtify/reference.hpp"
#include "rtify/training.hpp"
#include "rtify/wongwang.hpp"

namespace rtify {

/// Everything an experiment needs, resolved from an INI file. Every key has a
/// default except [run] seed. Unknown sections or keys are rejected.
struct ExperimentConfig {
  struct Run {
    std::uint64_t seed = 0;
    int workers = 1;
  } run;

  stimuli::DatasetSpec stimuli;

  struct Backbone {
    int hidden = 64;
    backbone::TrainSchedule schedule;
  } backbone;

  struct Rtify {
    int mlp_hidden = 32;
    double bias_init = 0.1;
    double theta_init_scale = 0.75;
    stopping::Options stop;
  } rtify;

  struct Objectives {
    objectives::HistogramSpec hist;
    training::RtFitOptions fit;
    training::SelfPenaltyOptions self_penalty;
  } objectives;

  struct WongWang {
    wongwang::WwParams params;
    wongwang::FitOptions fit;
  } wongwang;

  struct Reference {
    reference::DdmParams ddm;
    int train_trials_per_condition = 2000;
    int eval_trials_per_condition = 2000;
    int entropy_grid = 200;
  } reference;

  /// Canonical "section.key=value" lines, sorted; the hash is taken over this.
  std::string canonical() const;
  std::string hash() const;
};

ExperimentConfig parse_config(const std::string& text, std::optional<std::uint64_t> seed_override = std::nullopt);
ExperimentConfig load_config(const std::filesystem::path& path,
                             std::optional<std::uint64_t> seed_override = std::nullopt);

}  // namespace rtify
