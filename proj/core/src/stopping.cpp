#include "rtify/stopping.hpp"

#include <algorithm>
#include <cmath>

#include "rtify/parallel.hpp"
#include "rtify/rng.hpp"

namespace rtify::stopping {

diff::ParamSet init_params(const EvidenceMapShape& shape, double bias_init, std::uint64_t seed) {
  if (shape.input_dim < 1 || shape.hidden < 1) throw ConfigError("evidence map: invalid shape");
  Rng rng(derive_seed(seed, {tag(Stream::kRtifyInit)}));
  const auto k = static_cast<std::size_t>(shape.input_dim);
  const auto hdim = static_cast<std::size_t>(shape.hidden);
  std::normal_distribution<double> w1(0.0, 1.0 / std::sqrt(static_cast<double>(k)));
  std::normal_distribution<double> w2(0.0, 0.1 / std::sqrt(static_cast<double>(hdim)));
  diff::Array W1 = diff::Array::matrix(k, hdim);
  for (auto& v : W1.values()) v = static_cast<float>(w1(rng));
  diff::Array out = diff::Array::matrix(hdim, 1);
  for (auto& v : out.values()) v = static_cast<float>(w2(rng));
  diff::ParamSet p;
  p.set("W1", std::move(W1));
  p.set("b1", diff::Array::matrix(1, hdim));
  p.set("w2", std::move(out));
  p.set("b2", diff::Array::scalar(static_cast<float>(bias_init)));
  p.set("theta", diff::Array::scalar(1.0f));
  return p;
}

double evidence(std::span<const float> h, const diff::ParamSet& params) {
  const auto& W1 = params.at("W1");
  const auto& b1 = params.at("b1");
  const auto& w2 = params.at("w2");
  if (h.size() != W1.rows()) throw ShapeError("evidence_map: hidden dimension mismatch");
  const std::size_t hdim = W1.cols();
  double out = params.at("b2")[0];
  for (std::size_t j = 0; j < hdim; ++j) {
    float z = b1[j];
    for (std::size_t i = 0; i < h.size(); ++i) z += h[i] * W1(i, j);
    out += static_cast<double>(std::tanh(z)) * w2[j];
  }
  return out;
}

AccumulatorTrace accumulate(std::span<const double> evidence) {
  AccumulatorTrace tr;
  tr.evidence.assign(evidence.begin(), evidence.end());
  tr.phi.resize(evidence.size() + 1);
  tr.phi[0] = 0.0;
  for (std::size_t t = 0; t < evidence.size(); ++t) tr.phi[t + 1] = tr.phi[t] + evidence[t];
  return tr;
}

Decision first_crossing(std::span<const double> phi, double theta) {
  Decision d;
  if (phi.empty()) throw ShapeError("stopping_time: empty trace");
  for (std::size_t t = 0; t < phi.size(); ++t) {
    if (phi[t] > theta) {
      d.tau = static_cast<int>(t) + 1;
      d.crossed = true;
      return d;
    }
  }
  d.tau = static_cast<int>(phi.size());
  return d;
}

Decision stopping_time(const AccumulatorTrace& trace, double theta) {
  return first_crossing(std::span<const double>(trace.phi).subspan(1), theta);
}

ReadoutPolicy parse_policy(const std::string& token) {
  if (token == "sum-to-tau") return ReadoutPolicy::kSumToTau;
  if (token == "at-tau") return ReadoutPolicy::kAtTau;
  throw ConfigError("readout: unknown policy '" + token + "' (sum-to-tau, at-tau)");
}

std::string to_string(ReadoutPolicy policy) {
  return policy == ReadoutPolicy::kSumToTau ? "sum-to-tau" : "at-tau";
}

std::vector<double> readout_logits(const backbone::HiddenTrace& trace, int tau, ReadoutPolicy policy) {
  if (tau < 1 || tau > trace.n_steps) throw ShapeError("readout: tau outside [1, N]");
  std::vector<double> z(trace.classes, 0.0);
  if (policy == ReadoutPolicy::kAtTau) {
    for (int c = 0; c < trace.classes; ++c) z[c] = trace.logits_at(tau - 1)[c];
  } else {
    for (int t = 0; t < tau; ++t)
      for (int c = 0; c < trace.classes; ++c) z[c] += trace.logits_at(t)[c];
  }
  return z;
}

Readout readout(const backbone::HiddenTrace& trace, const Decision& decision, ReadoutPolicy policy) {
  const auto z = readout_logits(trace, decision.tau, policy);
  Readout r;
  const double mx = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  r.probabilities.resize(z.size());
  for (std::size_t c = 0; c < z.size(); ++c) total += (r.probabilities[c] = std::exp(z[c] - mx));
  for (auto& p : r.probabilities) p /= total;
  r.choice = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  return r;
}

std::vector<Decision> decide_all(const std::vector<backbone::HiddenTrace>& traces, const diff::ParamSet& params,
                                 const Options& opt, int workers) {
  const double theta = params.at("theta").item();
  std::vector<Decision> out(traces.size());
  parallel_for(traces.size(), workers, [&](std::size_t i) {
    const auto& tr = traces[i];
    std::vector<double> e(tr.n_steps);
    for (int t = 0; t < tr.n_steps; ++t) {
      e[t] = static_cast<float>(evidence(std::span<const float>(tr.h_at(t), tr.hidden), params));
    }
    auto d = stopping_time(accumulate(e), theta);
    d.choice = readout(tr, d, opt.policy).choice;
    d.rt_ms = rt_ms(d.tau, opt);
    out[i] = d;
  });
  return out;
}

double init_theta(const std::vector<backbone::HiddenTrace>& traces, const diff::ParamSet& params, double scale,
                  int step) {
  if (traces.empty()) throw ConfigError("init_theta: no traces");
  std::vector<double> phis;
  phis.reserve(traces.size());
  for (const auto& tr : traces) {
    const int upto = step > 0 ? std::min(step, tr.n_steps) : tr.n_steps;
    double phi = 0.0;
    for (int t = 0; t < upto; ++t) phi += evidence(std::span<const float>(tr.h_at(t), tr.hidden), params);
    phis.push_back(phi);
  }
  auto mid = phis.begin() + static_cast<std::ptrdiff_t>(phis.size() / 2);
  std::nth_element(phis.begin(), mid, phis.end());
  return scale * *mid;
}

}  // namespace rtify::stopping
