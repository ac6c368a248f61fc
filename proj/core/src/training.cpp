#include "rtify/training.hpp"

#include <algorithm>
#include <cmath>

#include "rtify/diff/adam.hpp"

namespace rtify::training {

namespace {

std::vector<const backbone::HiddenTrace*> pointers(const std::vector<backbone::HiddenTrace>& traces) {
  std::vector<const backbone::HiddenTrace*> out;
  out.reserve(traces.size());
  for (const auto& t : traces) out.push_back(&t);
  return out;
}

void summarize(EpochLog& log, const std::vector<stopping::Decision>& decisions, const std::vector<int>& labels) {
  double tau = 0, hit = 0, cens = 0;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    tau += decisions[i].tau;
    hit += decisions[i].choice == labels[i] ? 1 : 0;
    cens += decisions[i].crossed ? 0 : 1;
  }
  const double n = static_cast<double>(decisions.size());
  log.mean_tau = tau / n;
  log.accuracy = hit / n;
  log.censored_fraction = cens / n;
}

diff::Adam make_adam(double lr, double clip, double theta_scale) {
  diff::Adam adam({.lr = lr, .clip_norm = clip});
  adam.set_lr_scale("theta", theta_scale);
  return adam;
}

}  // namespace

diff::ParamSet init_rtify(const std::vector<backbone::HiddenTrace>& traces, int mlp_hidden, double bias_init,
                          double theta_scale, std::uint64_t seed, std::optional<int> target_step) {
  if (traces.empty()) throw ConfigError("init_rtify: no warm-start traces");
  auto p = stopping::init_params({traces.front().hidden, mlp_hidden}, bias_init, seed);
  const double theta = target_step ? stopping::init_theta(traces, p, 1.0, *target_step)
                                   : stopping::init_theta(traces, p, theta_scale);
  p.set("theta", diff::Array::scalar(static_cast<float>(theta)));
  return p;
}

int median_reference_step(const std::vector<std::vector<double>>& reference_rts, const stopping::Options& stop,
                          int n_steps) {
  std::vector<double> all;
  for (const auto& r : reference_rts)
    for (double v : r) all.push_back(std::abs(v));
  if (all.empty()) throw ConfigError("median_reference_step: empty reference");
  auto mid = all.begin() + static_cast<std::ptrdiff_t>(all.size() / 2);
  std::nth_element(all.begin(), mid, all.end());
  const int step = static_cast<int>(std::lround((*mid - stop.t0_ms) / stop.frame_ms));
  return std::clamp(step, 1, n_steps);
}

std::vector<std::vector<double>> signed_rts_by_condition(const std::vector<stopping::Decision>& decisions,
                                                         const std::vector<int>& labels,
                                                         const std::vector<int>& conditions, int n_conditions) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(n_conditions));
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    const int c = conditions[i];
    if (c >= 0 && c < n_conditions) out[c].push_back(objectives::signed_rt(decisions[i], labels[i]));
  }
  return out;
}

TrainResult fit_rt(const std::vector<backbone::HiddenTrace>& traces, const std::vector<int>& labels,
                   const std::vector<int>& conditions, const std::vector<std::vector<double>>& reference_rts,
                   diff::ParamSet params, const RtFitOptions& opt, const EpochCallback& on_epoch) {
  if (traces.empty()) throw ConfigError("fit_rt: no traces");
  if (traces.size() != labels.size() || traces.size() != conditions.size()) {
    throw ShapeError("fit_rt: traces, labels and conditions differ in length");
  }
  if (reference_rts.empty()) throw ConfigError("fit_rt: no reference conditions");
  const auto batch = pointers(traces);
  auto adam = make_adam(opt.lr, opt.clip_norm, opt.theta_lr_scale);
  TrainResult result;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    auto spec = opt.hist;
    spec.bandwidth_ms =
        objectives::annealed_bandwidth(opt.bandwidth_start_ms, opt.hist.bandwidth_ms, opt.anneal_epochs, epoch);
    std::vector<objectives::Histogram> ref;
    for (const auto& r : reference_rts) {
      ref.push_back(objectives::soft_histogram(
          opt.mode == objectives::FitMode::kCorrectOnly ? objectives::positive_part(r) : r, spec));
    }

    diff::Tape<float> tape;
    diff::Bound<float> bound(tape, params);
    EpochLog entry;
    entry.epoch = epoch;
    try {
      auto fwd = stopping::run_batch(tape, bound, batch, opt.stop);
      auto rts = objectives::signed_rt_node(fwd.tau, fwd.decisions, labels, opt.stop.frame_ms, opt.stop.t0_ms);
      auto mse = objectives::rt_fit_loss(rts, conditions, ref, spec, opt.mode);
      auto loss = mse;
      if (opt.censor_weight > 0.0) {
        loss = loss + diff::scale(objectives::censor_penalty(fwd.phi_final, bound["theta"], fwd.decisions),
                                  static_cast<float>(opt.censor_weight));
      }
      entry.loss = loss.value().item();
      entry.mse = mse.value().item();
      summarize(entry, fwd.decisions, labels);
      adam.step(params, bound.gradients(tape.backward(loss)));
    } catch (const NumericError& e) {
      throw NumericError("fit_rt: diverged in epoch " + std::to_string(epoch) + ": " + e.what());
    }
    result.log.push_back(entry);
    if (on_epoch) on_epoch(params, entry);
  }
  result.params = std::move(params);
  return result;
}

TrainResult train_self_penalty(const std::vector<backbone::HiddenTrace>& traces, const std::vector<int>& labels,
                               diff::ParamSet params, const SelfPenaltyOptions& opt, const EpochCallback& on_epoch) {
  if (traces.empty()) throw ConfigError("train_self_penalty: no traces");
  if (traces.size() != labels.size()) throw ShapeError("train_self_penalty: traces and labels differ in length");
  const auto batch = pointers(traces);
  auto adam = make_adam(opt.lr, opt.clip_norm, opt.theta_lr_scale);
  TrainResult result;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    diff::Tape<float> tape;
    diff::Bound<float> bound(tape, params);
    EpochLog entry;
    entry.epoch = epoch;
    try {
      auto fwd = stopping::run_batch(tape, bound, batch, opt.stop);
      auto loss = objectives::self_penalty_loss(fwd.readout, labels, fwd.tau, opt.lambda);
      if (opt.censor_weight > 0.0) {
        loss = loss + diff::scale(objectives::censor_penalty(fwd.phi_final, bound["theta"], fwd.decisions),
                                  static_cast<float>(opt.censor_weight));
      }
      entry.loss = loss.value().item();
      summarize(entry, fwd.decisions, labels);
      adam.step(params, bound.gradients(tape.backward(loss)));
    } catch (const NumericError& e) {
      throw NumericError("train_self_penalty: diverged in epoch " + std::to_string(epoch) + ": " + e.what());
    }
    result.log.push_back(entry);
    if (on_epoch) on_epoch(params, entry);
  }
  result.params = std::move(params);
  return result;
}

}  // namespace rtify::training
