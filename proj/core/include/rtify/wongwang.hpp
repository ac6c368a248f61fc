#pragma once

// Multi-population reduced Wong-Wang circuit driven by classifier logits.
// Populations share uniform self-excitation and uniform cross-inhibition:
//
//   x_i = J_self S_i - J_inh sum_{j != i} S_j + J_in l_i + I0 + sigma eta_i / sqrt(dt)
//   S_i <- clamp(S_i - dt S_i / tau_S + (dt / 1000) (1 - S_i) f(x_i), 0, 1)
//
// with f in Hz and dt, tau_S in ms. A decision is the first step where
// max_i S_i exceeds theta.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rtify/diff/bind.hpp"
#include "rtify/diff/ops.hpp"
#include "rtify/objectives.hpp"
#include "rtify/stopping.hpp"

namespace rtify::wongwang {

struct WwParams {
  int populations = 2;
  double a = 270.0;
  double b = 108.0;
  double d = 0.154;
  double gamma = 0.641;
  double tau_s = 100.0;
  double j_self = 0.2609;
  double j_inh = 0.0497;
  double j_in = 0.01;
  double i0 = 0.35;
  double sigma = 0.04;
  double dt = 1.0;
  double theta = 0.5;
  double s0 = 0.1;
  /// Use u / (1 - exp(-d u)) for all u instead of clamping u <= 0 to zero.
  bool continuous_transfer = false;

  void validate() const;
};

/// f and its partials with respect to u = a x - b and d.
struct TransferParts {
  double f = 0.0;
  double df_du = 0.0;
  double df_dd = 0.0;
  double df_dgamma = 0.0;
};

TransferParts transfer_parts(double u, double d, double gamma, bool continuous);

inline double transfer(double x, const WwParams& p) {
  return transfer_parts(p.a * x - p.b, p.d, p.gamma, p.continuous_transfer).f;
}

/// Sum of all entries of s except index i, accumulated in sorted order so the
/// result depends only on the multiset (exact permutation equivariance).
double sum_others(std::span<const double> s, std::size_t i);

/// One Euler step for one trial. noise holds standard normal draws.
std::vector<double> ww_step(std::span<const double> s, std::span<const double> logits, const WwParams& p,
                            std::span<const double> noise);

/// Logits over time for one trial. A single frame is held for every step;
/// otherwise step t (1-based) reads frame floor((t - 1) dt / frame_ms).
struct Drive {
  int frames = 1;
  int populations = 2;
  double frame_ms = 0.0;
  std::vector<double> logits;  // frames x populations

  static Drive constant(std::vector<double> logits);
  std::span<const double> at_step(int step, double dt) const;
};

struct WwRun {
  stopping::Decision decision;
  int steps = 0;                  // steps actually simulated
  std::vector<double> trajectory;  // (steps + 1) x populations, row 0 = initial state
};

/// max_steps >= 1. Noise comes from `seed` only; record_trajectory keeps every state.
WwRun ww_run(const Drive& drive, const WwParams& p, int max_steps, std::uint64_t seed, double t0_ms,
             bool record_trajectory = false, bool run_to_end = false);

void write_trajectory_csv(const std::filesystem::path& path, const WwRun& run, int populations,
                          const std::string& config_hash);

/// Unconstrained representation used for training: positive quantities in log
/// space, theta as a logit. dt, s0 and populations stay fixed. sigma == 0 is
/// kept fixed at zero.
diff::ParamSet to_raw(const WwParams& p);
WwParams from_raw(const diff::ParamSet& raw, const WwParams& fixed);

/// Natural-valued scalar nodes of a raw parameter set.
template <class T>
struct WwVars {
  diff::Var<T> a, b, d, gamma, tau_s, j_self, j_inh, j_in, i0, sigma, theta;
};

template <class T>
WwVars<T> natural_vars(diff::Tape<T>& tape, const diff::Bound<T>& raw) {
  auto pos = [&](const char* name) { return diff::exp(raw[name]); };
  WwVars<T> v;
  v.a = pos("log_a");
  v.b = pos("log_b");
  v.d = pos("log_d");
  v.gamma = pos("log_gamma");
  v.tau_s = pos("log_tau_s");
  v.j_self = pos("log_j_self");
  v.j_inh = pos("log_j_inh");
  v.j_in = pos("log_j_in");
  v.i0 = pos("log_i0");
  v.sigma = raw.contains("log_sigma") ? pos("log_sigma") : tape.constant(diff::BasicArray<T>::scalar(T{0}));
  v.theta = diff::sigmoid(raw["logit_theta"]);
  return v;
}

/// Scalar parameters of one step, read from node values.
struct StepScalars {
  double a, b, d, gamma, tau_s, j_self, j_inh, j_in, i0, sigma, dt;
  bool continuous;
};

/// Fused batched step: S (B x M) -> S' (B x M). drive and noise are B x M
/// constants. The backward pass is hand-derived (see wongwang.cpp).
template <class T>
diff::Var<T> ww_step_node(const diff::Var<T>& s, const WwVars<T>& v, const diff::BasicArray<T>& drive,
                          const diff::BasicArray<T>& noise, double dt, bool continuous);

/// Everything ww_fit needs besides the data.
struct FitOptions {
  int epochs = 60;
  double lr = 0.01;
  int max_steps = 0;  // 0: derived from the histogram range, t0 and dt
  double t0_ms = 200.0;
  objectives::HistogramSpec hist;
  double bandwidth_start_ms = 40.0;
  int anneal_epochs = 0;
  double censor_weight = 1.0;
  double eps_den = 1e-3;
  objectives::FitMode mode = objectives::FitMode::kFull;
  std::uint64_t seed = 0;
  int workers = 1;
};

struct FitLog {
  int epoch = 0;
  double loss = 0.0;
  double mse = 0.0;  // at the annealed bandwidth of that epoch
};

struct FitResult {
  WwParams params;
  diff::ParamSet raw;
  std::vector<FitLog> log;
};

using FitCallback = std::function<void(const diff::ParamSet& raw, const FitLog&)>;

int default_max_steps(const FitOptions& opt, double dt);

/// Trains WW parameters against per-condition reference signed RTs with fixed
/// noise draws per epoch.
FitResult ww_fit(const std::vector<Drive>& drives, const std::vector<int>& labels, const std::vector<int>& conditions,
                 const std::vector<std::vector<double>>& reference_rts, const WwParams& init, const FitOptions& opt,
                 const FitCallback& on_epoch = {});

/// Simulated decisions for a whole set (trial i uses derive_seed(seed, i)).
std::vector<stopping::Decision> simulate_all(const std::vector<Drive>& drives, const WwParams& p, int max_steps,
                                             std::uint64_t seed, double t0_ms, int workers = 1);

}  // namespace rtify::wongwang
