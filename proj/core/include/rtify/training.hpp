#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "rtify/backbone.hpp"
#include "rtify/objectives.hpp"
#include "rtify/stopping.hpp"

namespace rtify::training {

/// Supervised fit of the evidence map and threshold to reference signed RTs.
/// Full batch: every condition must be present in every step.
struct RtFitOptions {
  int epochs = 200;
  double lr = 3e-3;
  double theta_lr_scale = 1.0;
  objectives::HistogramSpec hist;
  /// Kernel bandwidth starts wide and shrinks to hist.bandwidth_ms over anneal_epochs.
  double bandwidth_start_ms = 300.0;
  int anneal_epochs = 100;
  double censor_weight = 1.0;
  objectives::FitMode mode = objectives::FitMode::kFull;
  stopping::Options stop;
  double clip_norm = 0.0;
};

/// Self-penalty training: CE on the readout plus lambda * z_y * tau.
struct SelfPenaltyOptions {
  int epochs = 200;
  double lr = 3e-3;
  double theta_lr_scale = 1.0;
  double lambda = 1e-3;
  double censor_weight = 0.0;
  stopping::Options stop;
  double clip_norm = 0.0;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double mse = 0.0;            // fit: histogram MSE at this epoch's bandwidth
  double mean_tau = 0.0;
  double accuracy = 0.0;
  double censored_fraction = 0.0;
};

struct TrainResult {
  diff::ParamSet params;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const diff::ParamSet&, const EpochLog&)>;

/// Initial evidence map with theta set from the warm-start traces, either
/// theta_scale * median(Phi_N) or, given target_step, median(Phi_target_step).
diff::ParamSet init_rtify(const std::vector<backbone::HiddenTrace>& traces, int mlp_hidden, double bias_init,
                          double theta_scale, std::uint64_t seed, std::optional<int> target_step = std::nullopt);

/// Step whose RT equals the median |reference RT|, clamped to [1, n_steps].
int median_reference_step(const std::vector<std::vector<double>>& reference_rts, const stopping::Options& stop,
                          int n_steps);

TrainResult fit_rt(const std::vector<backbone::HiddenTrace>& traces, const std::vector<int>& labels,
                   const std::vector<int>& conditions, const std::vector<std::vector<double>>& reference_rts,
                   diff::ParamSet params, const RtFitOptions& opt, const EpochCallback& on_epoch = {});

TrainResult train_self_penalty(const std::vector<backbone::HiddenTrace>& traces, const std::vector<int>& labels,
                               diff::ParamSet params, const SelfPenaltyOptions& opt,
                               const EpochCallback& on_epoch = {});

/// Per-condition signed RTs of a decision set.
std::vector<std::vector<double>> signed_rts_by_condition(const std::vector<stopping::Decision>& decisions,
                                                         const std::vector<int>& labels,
                                                         const std::vector<int>& conditions, int n_conditions);

}  // namespace rtify::training
