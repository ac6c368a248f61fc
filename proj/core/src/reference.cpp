#include "rtify/reference.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "rtify/parallel.hpp"
#include "rtify/rng.hpp"

namespace rtify::reference {

void DdmParams::validate() const {
  if (!(bound > 0.0)) throw ConfigError("ddm: bound must be > 0");
  if (!(noise > 0.0)) throw ConfigError("ddm: noise must be > 0");
  if (!(dt_ms > 0.0)) throw ConfigError("ddm: dt_ms must be > 0");
  if (!(max_rt_ms > t0_ms)) throw ConfigError("ddm: max_rt_ms must exceed t0_ms");
}

std::vector<DdmTrial> simulate_ddm(const DdmParams& params, double coherence, int n_trials, std::uint64_t seed,
                                   int workers) {
  params.validate();
  if (n_trials < 1) throw ConfigError("simulate_ddm: n_trials must be >= 1");
  const double dt = params.dt_ms / 1000.0;
  const double mu = params.drift * coherence * dt;
  const double sd = params.noise * std::sqrt(dt);
  const int max_steps = static_cast<int>(std::floor((params.max_rt_ms - params.t0_ms) / params.dt_ms));
  std::vector<DdmTrial> out(static_cast<std::size_t>(n_trials));
  parallel_for(out.size(), workers, [&](std::size_t i) {
    Rng rng(derive_seed(seed, {tag(Stream::kDdmTrial), i}));
    std::normal_distribution<double> n01(0.0, 1.0);
    double x = 0.0;
    DdmTrial t;
    int step = 0;
    while (step < max_steps && std::abs(x) < params.bound) {
      x += mu + sd * n01(rng);
      ++step;
    }
    if (std::abs(x) >= params.bound) {
      t.rt_ms = params.t0_ms + step * params.dt_ms;
      t.correct = x > 0.0;
    } else {
      t.censored = true;
      t.rt_ms = params.max_rt_ms;
      t.correct = x > 0.0;
    }
    out[i] = t;
  });
  return out;
}

double ddm_accuracy(const DdmParams& params, double coherence) {
  return 1.0 / (1.0 + std::exp(-2.0 * params.drift * coherence * params.bound / (params.noise * params.noise)));
}

std::vector<double> signed_rts(const std::vector<DdmTrial>& trials) {
  std::vector<double> out;
  out.reserve(trials.size());
  for (const auto& t : trials) out.push_back(t.signed_rt());
  return out;
}

double interpolated_crossing(std::span<const double> phi, double theta, double phi0) {
  double prev = phi0;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    if (phi[i] > theta) return static_cast<double>(i) + (theta - prev) / (phi[i] - prev);
    prev = phi[i];
  }
  throw NumericError("interpolated_crossing: trace never exceeds threshold");
}

FdReport finite_diff_check(const std::function<double(std::span<const double>)>& f, std::vector<double> params,
                           std::span<const double> analytic, double eps, double abs_floor) {
  if (analytic.size() != params.size()) throw ShapeError("finite_diff_check: gradient size mismatch");
  if (!(eps > 0.0)) throw ConfigError("finite_diff_check: eps must be > 0");
  const double a0 = f(params);
  const double a1 = f(params);
  if (a0 != a1 && !(std::isnan(a0) && std::isnan(a1))) {
    throw NumericError("finite_diff_check: function is not deterministic");
  }
  FdReport rep;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + eps;
    const double up = f(params);
    params[i] = keep - eps;
    const double down = f(params);
    params[i] = keep;
    const double numeric = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), abs_floor});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (i == 0 || rel > rep.max_rel_error) rep = {rel, i, analytic[i], numeric};
  }
  return rep;
}

double entropy(std::span<const float> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (float l : logits) z += std::exp(l - mx);
  const double log_z = std::log(z);
  double h = 0.0;
  for (float l : logits) {
    const double lp = (l - mx) - log_z;
    h -= std::exp(lp) * lp;
  }
  return std::max(h, 0.0);
}

stopping::Decision entropy_threshold_rt(const backbone::HiddenTrace& trace, double threshold,
                                        const stopping::Options& opt) {
  if (trace.n_steps < 1) throw ShapeError("entropy_threshold_rt: empty sequence");
  stopping::Decision d;
  d.tau = trace.n_steps;
  for (int t = 0; t < trace.n_steps; ++t) {
    if (entropy({trace.logits_at(t), static_cast<std::size_t>(trace.classes)}) < threshold) {
      d.tau = t + 1;
      d.crossed = true;
      break;
    }
  }
  const float* l = trace.logits_at(d.tau - 1);
  d.choice = static_cast<int>(std::max_element(l, l + trace.classes) - l);
  d.rt_ms = stopping::rt_ms(d.tau, opt);
  return d;
}

std::vector<double> entropy_grid(int n, int n_classes, double lowest_fraction) {
  if (n < 1) throw ConfigError("entropy_grid: needs at least one point");
  if (n_classes < 2) throw ConfigError("entropy_grid: needs at least two classes");
  const double top = std::log(static_cast<double>(n_classes));
  if (n == 1) return {top};
  std::vector<double> g(static_cast<std::size_t>(n));
  const double lo = std::log(top * lowest_fraction);
  const double hi = std::log(top);
  for (int i = 0; i < n; ++i) g[i] = std::exp(lo + (hi - lo) * i / (n - 1));
  g.back() = top;
  return g;
}

EntropyFit fit_entropy_threshold(const std::vector<backbone::HiddenTrace>& traces, const std::vector<int>& labels,
                                 const std::vector<int>& conditions,
                                 const std::vector<objectives::Histogram>& reference, const std::vector<double>& grid,
                                 const objectives::HistogramSpec& spec, const stopping::Options& opt, int workers) {
  if (grid.empty()) throw ConfigError("fit_entropy_threshold: empty grid");
  if (reference.empty()) throw ConfigError("fit_entropy_threshold: no reference conditions");
  if (traces.size() != labels.size() || traces.size() != conditions.size()) {
    throw ShapeError("fit_entropy_threshold: traces, labels and conditions differ in length");
  }
  const int n_cond = static_cast<int>(reference.size());

  // Entropy per step is shared by all grid points.
  std::vector<std::vector<double>> ent(traces.size());
  parallel_for(traces.size(), workers, [&](std::size_t i) {
    const auto& tr = traces[i];
    ent[i].resize(tr.n_steps);
    for (int t = 0; t < tr.n_steps; ++t) ent[i][t] = entropy({tr.logits_at(t), static_cast<std::size_t>(tr.classes)});
  });

  EntropyFit fit;
  fit.grid = grid;
  fit.mse_curve.assign(grid.size(), 0.0);
  parallel_for(grid.size(), workers, [&](std::size_t g) {
    std::vector<std::vector<double>> rts(n_cond);
    for (std::size_t i = 0; i < traces.size(); ++i) {
      const int c = conditions[i];
      if (c < 0 || c >= n_cond) continue;
      const auto& tr = traces[i];
      int tau = tr.n_steps;
      for (int t = 0; t < tr.n_steps; ++t) {
        if (ent[i][t] < grid[g]) {
          tau = t + 1;
          break;
        }
      }
      const float* l = tr.logits_at(tau - 1);
      stopping::Decision d;
      d.tau = tau;
      d.choice = static_cast<int>(std::max_element(l, l + tr.classes) - l);
      d.rt_ms = stopping::rt_ms(tau, opt);
      rts[c].push_back(objectives::signed_rt(d, labels[i]));
    }
    double total = 0.0;
    for (int c = 0; c < n_cond; ++c) {
      if (rts[c].empty()) throw ShapeError("fit_entropy_threshold: condition " + std::to_string(c) + " has no trials");
      total += objectives::histogram_mse(objectives::soft_histogram(rts[c], spec), reference[c]);
    }
    fit.mse_curve[g] = total / n_cond;
  });
  const auto best = std::min_element(fit.mse_curve.begin(), fit.mse_curve.end()) - fit.mse_curve.begin();
  fit.threshold = grid[best];
  fit.mse = fit.mse_curve[best];
  return fit;
}

}  // namespace rtify::reference
