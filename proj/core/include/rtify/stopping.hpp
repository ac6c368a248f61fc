#pragma once

// Differentiable stopping time.
//
// Hidden states h_t of a frozen recurrent network are mapped to scalar
// evidence e_t = f_w(h_t), accumulated into Phi_t = e_1 + ... + e_t, and the
// decision time is tau = min{t : Phi_t > theta} (censored at N if no step
// crosses). tau is an integer, so the backward pass uses the slope of the
// piecewise-linear interpolation of Phi around the crossing:
//
//   d tau / d Phi_tau = -1 / (Phi_tau - Phi_{tau-1})
//   d tau / d theta   = +1 / (Phi_tau - Phi_{tau-1})
//
// The forward value of tau is always the exact integer rule.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rtify/backbone.hpp"
#include "rtify/diff/bind.hpp"
#include "rtify/diff/ops.hpp"

namespace rtify::stopping {

/// Evidence map f_w: k -> H -> 1 perceptron with tanh hidden layer, plus the
/// threshold. ParamSet names: W1 (k x H), b1 (1 x H), w2 (H x 1), b2 (1 x 1), theta (1 x 1).
struct EvidenceMapShape {
  int input_dim = 64;
  int hidden = 64;
};

/// Small random weights and a positive output bias, so early evidence is
/// positive and most trials cross. theta starts at 1 until init_theta runs.
diff::ParamSet init_params(const EvidenceMapShape& shape, double bias_init, std::uint64_t seed);

template <class T>
diff::Var<T> evidence_map(const diff::Bound<T>& p, const diff::Var<T>& h_rows) {
  if (h_rows.value().cols() != p["W1"].value().rows()) {
    throw ShapeError("evidence_map: hidden dimension " + std::to_string(h_rows.value().cols()) + " but W1 expects " +
                     std::to_string(p["W1"].value().rows()));
  }
  auto z = diff::tanh(diff::matmul(h_rows, p["W1"]) + p["b1"]);
  return diff::matmul(z, p["w2"]) + p["b2"];
}

/// Plain evaluation of f_w on one hidden vector.
double evidence(std::span<const float> h, const diff::ParamSet& params);

/// e_1..e_N and Phi_0..Phi_N with Phi_0 = 0.
struct AccumulatorTrace {
  std::vector<double> evidence;
  std::vector<double> phi;

  int n_steps() const { return static_cast<int>(evidence.size()); }
  /// Phi_tau - Phi_{tau-1} for 1-based tau.
  double increment(int tau) const { return phi[tau] - phi[tau - 1]; }
};

AccumulatorTrace accumulate(std::span<const double> evidence);

struct Decision {
  /// 1-based step in [1, N].
  int tau = 0;
  bool crossed = false;
  int choice = -1;
  double rt_ms = 0.0;
};

/// First t with Phi_t > theta (strict); censored at N otherwise.
Decision stopping_time(const AccumulatorTrace& trace, double theta);

/// Same rule on an explicit Phi_1..Phi_N sequence.
Decision first_crossing(std::span<const double> phi, double theta);

/// sign(e) * max(|e|, eps); zero maps to +eps.
inline double guarded_increment(double e, double eps) {
  const double mag = std::max(std::abs(e), eps);
  return e < 0.0 ? -mag : mag;
}

/// Stopping-time node for a batch. Forward value: tau_b (B x 1). Backward:
/// upstream g_b becomes -g_b / e_b on phi_tau[b] and +sum_b g_b / e_b on theta,
/// where e_b is the guarded crossing increment. Censored rows pass nothing.
template <class T>
diff::Var<T> stopping_time_node(const diff::Var<T>& phi_tau, const diff::Var<T>& theta,
                                const std::vector<Decision>& decisions, const std::vector<double>& increments,
                                double eps_den) {
  const std::size_t n = decisions.size();
  if (phi_tau.value().size() != n || increments.size() != n) throw ShapeError("stopping_time_node: batch mismatch");
  if (theta.value().size() != 1) throw ShapeError("stopping_time_node: theta must be scalar");
  auto value = diff::BasicArray<T>::matrix(n, 1);
  std::vector<double> inv(n, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    value[b] = static_cast<T>(decisions[b].tau);
    if (decisions[b].crossed) inv[b] = 1.0 / guarded_increment(increments[b], eps_den);
  }
  const auto theta_shape = theta.value().shape();
  return diff::custom_op<T>("stopping_time", std::move(value), {phi_tau, theta},
                            [inv, n, theta_shape](const diff::BasicArray<T>& g) {
                              auto d_phi = diff::BasicArray<T>::matrix(n, 1);
                              double d_theta = 0.0;
                              for (std::size_t b = 0; b < n; ++b) {
                                d_phi[b] = static_cast<T>(-static_cast<double>(g[b]) * inv[b]);
                                d_theta += static_cast<double>(g[b]) * inv[b];
                              }
                              return std::vector<diff::BasicArray<T>>{
                                  std::move(d_phi), diff::BasicArray<T>(theta_shape, static_cast<T>(d_theta))};
                            });
}

enum class ReadoutPolicy { kSumToTau, kAtTau };
ReadoutPolicy parse_policy(const std::string& token);
std::string to_string(ReadoutPolicy policy);

/// Readout logits: sum of l_1..l_tau, or l_tau alone.
std::vector<double> readout_logits(const backbone::HiddenTrace& trace, int tau, ReadoutPolicy policy);

struct Readout {
  std::vector<double> probabilities;
  int choice = -1;
};

Readout readout(const backbone::HiddenTrace& trace, const Decision& decision, ReadoutPolicy policy);

/// Readout logits of a batch (B x C) as a function of tau. The frozen logits
/// are constants; the backward pass treats the readout as piecewise linear in
/// tau, with slope l_tau (sum-to-tau) or l_tau - l_{tau-1} (at-tau). Censored
/// rows contribute no gradient.
template <class T>
diff::Var<T> readout_node(const diff::Var<T>& tau, const std::vector<const backbone::HiddenTrace*>& traces,
                          const std::vector<Decision>& decisions, ReadoutPolicy policy, bool with_slope = true) {
  const std::size_t n = traces.size();
  const std::size_t classes = static_cast<std::size_t>(traces.front()->classes);
  auto value = diff::BasicArray<T>::matrix(n, classes);
  auto slope = diff::BasicArray<T>::matrix(n, classes);
  for (std::size_t b = 0; b < n; ++b) {
    const auto& tr = *traces[b];
    const int t = decisions[b].tau;
    const auto z = readout_logits(tr, t, policy);
    for (std::size_t c = 0; c < classes; ++c) {
      value(b, c) = static_cast<T>(z[c]);
      if (!with_slope || !decisions[b].crossed) continue;
      const double cur = tr.logits_at(t - 1)[c];
      if (policy == ReadoutPolicy::kSumToTau) {
        slope(b, c) = static_cast<T>(cur);
      } else if (t > 1) {
        slope(b, c) = static_cast<T>(cur - tr.logits_at(t - 2)[c]);
      }
    }
  }
  return diff::custom_op<T>("readout", std::move(value), {tau},
                            [slope, n, classes](const diff::BasicArray<T>& g) {
                              auto d_tau = diff::BasicArray<T>::matrix(n, 1);
                              for (std::size_t b = 0; b < n; ++b) {
                                T acc = 0;
                                for (std::size_t c = 0; c < classes; ++c) acc += g(b, c) * slope(b, c);
                                d_tau[b] = acc;
                              }
                              return std::vector<diff::BasicArray<T>>{std::move(d_tau)};
                            });
}

struct Options {
  double eps_den = 1e-3;
  double t0_ms = 0.0;
  double frame_ms = 1000.0 / 75.0;
  ReadoutPolicy policy = ReadoutPolicy::kSumToTau;
  /// Let the readout pass gradient to tau (first-order in the readout sum).
  bool readout_tau_gradient = true;
};

inline double rt_ms(int tau, const Options& opt) { return opt.t0_ms + tau * opt.frame_ms; }

/// The whole module recorded on a tape for a batch of frozen traces.
template <class T>
struct BatchForward {
  diff::Var<T> evidence;   // B x N
  diff::Var<T> phi_tau;    // B x 1
  diff::Var<T> phi_final;  // B x 1
  diff::Var<T> tau;        // B x 1, surrogate gradient attached
  diff::Var<T> readout;    // B x C
  std::vector<Decision> decisions;
  std::vector<AccumulatorTrace> traces;
};

template <class T>
BatchForward<T> run_batch(diff::Tape<T>& tape, const diff::Bound<T>& p,
                          const std::vector<const backbone::HiddenTrace*>& batch, const Options& opt) {
  if (batch.empty()) throw ShapeError("run_batch: empty batch");
  const std::size_t n = batch.size();
  const std::size_t steps = static_cast<std::size_t>(batch.front()->n_steps);
  const std::size_t k = static_cast<std::size_t>(batch.front()->hidden);
  auto h_all = diff::BasicArray<T>::matrix(n * steps, k);
  for (std::size_t b = 0; b < n; ++b) {
    if (static_cast<std::size_t>(batch[b]->n_steps) != steps) throw ShapeError("run_batch: mixed sequence lengths");
    for (std::size_t i = 0; i < steps * k; ++i) h_all[b * steps * k + i] = static_cast<T>(batch[b]->h[i]);
  }
  BatchForward<T> out;
  out.evidence = diff::reshape(evidence_map(p, tape.constant(std::move(h_all))), diff::Shape{n, steps});
  const double theta = static_cast<double>(p["theta"].value().item());

  auto mask = diff::BasicArray<T>::matrix(n, steps);
  std::vector<double> increments(n);
  const auto& ev = out.evidence.value();
  for (std::size_t b = 0; b < n; ++b) {
    std::vector<double> e(steps);
    for (std::size_t t = 0; t < steps; ++t) e[t] = static_cast<double>(ev(b, t));
    auto trace = accumulate(e);
    auto d = stopping_time(trace, theta);
    increments[b] = trace.increment(d.tau);
    for (int t = 0; t < d.tau; ++t) mask(b, static_cast<std::size_t>(t)) = T{1};
    d.choice = readout(*batch[b], d, opt.policy).choice;
    d.rt_ms = rt_ms(d.tau, opt);
    out.decisions.push_back(d);
    out.traces.push_back(std::move(trace));
  }
  out.phi_tau = diff::sum(diff::mul(out.evidence, tape.constant(std::move(mask))), 1);
  out.phi_final = diff::sum(out.evidence, 1);
  out.tau = stopping_time_node(out.phi_tau, p["theta"], out.decisions, increments, opt.eps_den);
  out.readout = readout_node(out.tau, batch, out.decisions, opt.policy, opt.readout_tau_gradient);
  return out;
}

/// Decisions for every trace with the current parameters (no tape).
std::vector<Decision> decide_all(const std::vector<backbone::HiddenTrace>& traces, const diff::ParamSet& params,
                                 const Options& opt, int workers = 1);

/// theta := scale * median(Phi_step) over the given traces; step <= 0 means the last step.
double init_theta(const std::vector<backbone::HiddenTrace>& traces, const diff::ParamSet& params, double scale,
                  int step = 0);

}  // namespace rtify::stopping
