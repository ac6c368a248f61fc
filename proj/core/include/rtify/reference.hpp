#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "rtify/backbone.hpp"
#include "rtify/objectives.hpp"
#include "rtify/stopping.hpp"

namespace rtify::reference {

/// Drift-diffusion generator for synthetic reference RTs.
/// dx = drift * coherence * dt + noise * dW between -bound and +bound.
struct DdmParams {
  double drift = 25.0;  // per second at coherence 1
  double bound = 0.75;
  double noise = 1.0;
  double t0_ms = 300.0;
  double dt_ms = 1.0;
  double max_rt_ms = 2000.0;

  void validate() const;
};

struct DdmTrial {
  double rt_ms = 0.0;
  bool correct = false;
  bool censored = false;
  double signed_rt() const { return correct ? rt_ms : -rt_ms; }
};

/// Trial i draws from its own stream, so results do not depend on `workers`.
std::vector<DdmTrial> simulate_ddm(const DdmParams& params, double coherence, int n_trials, std::uint64_t seed,
                                   int workers = 1);

/// Closed-form probability of hitting the correct bound.
double ddm_accuracy(const DdmParams& params, double coherence);

std::vector<double> signed_rts(const std::vector<DdmTrial>& trials);

/// Continuous first-crossing time of the piecewise-linear interpolation of
/// phi_1..phi_N (phi_0 given, 0 by default). Throws NumericError if phi never exceeds theta.
double interpolated_crossing(std::span<const double> phi, double theta, double phi0 = 0.0);

struct FdReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Central differences against `analytic`. Relative error per coordinate is
/// |a - n| / max(|a|, |n|, abs_floor). Throws NumericError when two evaluations
/// at the same point disagree.
FdReport finite_diff_check(const std::function<double(std::span<const double>)>& f, std::vector<double> params,
                           std::span<const double> analytic, double eps, double abs_floor = 1e-8);

/// Natural-log entropy of softmax(logits).
double entropy(std::span<const float> logits);

/// Halts at the first step whose output entropy is below threshold.
stopping::Decision entropy_threshold_rt(const backbone::HiddenTrace& trace, double threshold,
                                        const stopping::Options& opt);

/// n log-spaced thresholds ending at ln C (the top of the admissible range).
std::vector<double> entropy_grid(int n, int n_classes, double lowest_fraction = 1e-4);

struct EntropyFit {
  double threshold = 0.0;
  double mse = 0.0;
  std::vector<double> grid;
  std::vector<double> mse_curve;
};

/// Grid search minimizing the condition-averaged histogram MSE.
EntropyFit fit_entropy_threshold(const std::vector<backbone::HiddenTrace>& traces, const std::vector<int>& labels,
                                 const std::vector<int>& conditions,
                                 const std::vector<objectives::Histogram>& reference, const std::vector<double>& grid,
                                 const objectives::HistogramSpec& spec, const stopping::Options& opt,
                                 int workers = 1);

}  // namespace rtify::reference
