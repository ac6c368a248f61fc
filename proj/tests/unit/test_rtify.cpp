#include <gtest/gtest.h>

#include <random>

#include "gradcheck.hpp"
#include "rtify/error.hpp"
#include "rtify/reference.hpp"
#include "rtify/stopping.hpp"
#include "rtify/training.hpp"

namespace rtify::stopping {
namespace {

using diff::Array;
using diff::BasicArray;
using diff::Tape;

backbone::HiddenTrace random_trace(int steps, int hidden, int classes, std::mt19937_64& rng) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  backbone::HiddenTrace tr;
  tr.n_steps = steps;
  tr.hidden = hidden;
  tr.classes = classes;
  tr.h.resize(static_cast<std::size_t>(steps) * hidden);
  tr.logits.resize(static_cast<std::size_t>(steps) * classes);
  for (auto& v : tr.h) v = std::tanh(g(rng));
  for (auto& v : tr.logits) v = g(rng);
  return tr;
}

std::vector<double> phis(const std::vector<double>& e) { return accumulate(e).phi; }

TEST(EvidenceMap, ZeroWeightsGiveZeroEvidence) {
  auto p = init_params({4, 3}, 0.0, 1);
  for (auto& [name, value] : p)
    for (auto& v : value.values()) v = 0.0f;
  const std::vector<float> h{0.3f, -0.9f, 0.1f, 0.7f};
  EXPECT_EQ(evidence(h, p), 0.0);
}

TEST(EvidenceMap, PureFunctionOfHiddenState) {
  const auto p = init_params({4, 5}, 0.1, 2);
  const std::vector<float> h{0.3f, -0.9f, 0.1f, 0.7f};
  EXPECT_EQ(evidence(h, p), evidence(h, p));
  Tape<float> tape;
  diff::Bound<float> b(tape, p);
  auto rows = tape.constant(BasicArray<float>(diff::Shape{2, 4}, {0.3f, -0.9f, 0.1f, 0.7f, 0.3f, -0.9f, 0.1f, 0.7f}));
  const auto e = evidence_map(b, rows).value();
  EXPECT_EQ(e[0], e[1]);
  EXPECT_NEAR(e[0], evidence(h, p), 1e-6);
}

TEST(EvidenceMap, DimensionMismatchThrows) {
  const auto p = init_params({4, 5}, 0.1, 2);
  const std::vector<float> h{0.3f, 0.1f};
  EXPECT_THROW(evidence(h, p), ShapeError);
}

TEST(EvidenceMap, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  const auto at = testing::to_double(init_params({6, 5}, 0.1, 3));
  const auto h = testing::uniform(rng, 9, 6, -1, 1);
  const auto r = testing::grad_check(
      [&](auto& tape, const auto& p) { return diff::sum(diff::square(evidence_map(p, tape.constant(h)))); }, at);
  EXPECT_LE(r.max_rel_error, 1e-3);
}

TEST(Accumulate, PrefixSums) {
  EXPECT_EQ(phis({1, 1, 1}), (std::vector<double>{0, 1, 2, 3}));
  const auto p = phis({0.5, -0.2, 0.4});
  EXPECT_DOUBLE_EQ(p[1], 0.5);
  EXPECT_DOUBLE_EQ(p[2], 0.3);
  EXPECT_DOUBLE_EQ(p[3], 0.7);
  EXPECT_EQ(phis({0, 0, 0}), (std::vector<double>{0, 0, 0, 0}));
}

TEST(Accumulate, IncrementEqualsEvidence) {
  const std::vector<double> e{0.25, -1.5, 3.0, 0.125};
  const auto tr = accumulate(e);
  for (int t = 1; t <= tr.n_steps(); ++t) EXPECT_EQ(tr.increment(t), e[t - 1]);
}

TEST(StoppingTime, Examples) {
  const std::vector<double> a{0.5, 1.0, 1.5};
  auto d = first_crossing(a, 0.9);
  EXPECT_EQ(d.tau, 2);
  EXPECT_TRUE(d.crossed);

  const std::vector<double> b{0.1, 0.2, 0.3};
  d = first_crossing(b, 5.0);
  EXPECT_EQ(d.tau, 3);
  EXPECT_FALSE(d.crossed);

  d = stopping_time(accumulate(std::vector<double>(10, 0.4)), 1.0);
  EXPECT_EQ(d.tau, 3);
  EXPECT_TRUE(d.crossed);
}

TEST(StoppingTime, StrictInequality) {
  const std::vector<double> phi{0.5, 1.0, 1.5};
  EXPECT_EQ(first_crossing(phi, 1.0).tau, 3);
}

TEST(StoppingTime, ThresholdMonotonicity) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> g(0.1, 1.0);
  std::uniform_real_distribution<double> th(-3.0, 8.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> e(40);
    for (auto& v : e) v = g(rng);
    const auto tr = accumulate(e);
    double t1 = th(rng), t2 = th(rng);
    if (t1 > t2) std::swap(t1, t2);
    EXPECT_LE(stopping_time(tr, t1).tau, stopping_time(tr, t2).tau);
  }
}

TEST(StoppingTime, DecisionInvariants) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g(0.05, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> e(30);
    for (auto& v : e) v = g(rng);
    const auto tr = accumulate(e);
    const double theta = 2.0;
    const auto d = stopping_time(tr, theta);
    if (d.crossed) {
      EXPECT_GT(tr.phi[d.tau], theta);
      for (int t = 1; t < d.tau; ++t) EXPECT_LE(tr.phi[t], theta);
    } else {
      EXPECT_EQ(d.tau, 30);
      for (int t = 1; t <= 30; ++t) EXPECT_LE(tr.phi[t], theta);
    }
  }
}

// Surrogate gradients at a single decision, read off a double tape.
struct Surrogate {
  double d_theta;
  double d_phi;
};

Surrogate surrogate(const AccumulatorTrace& tr, double theta, double eps_den = 1e-3) {
  const auto d = stopping_time(tr, theta);
  Tape<double> tape;
  auto phi_tau = tape.parameter(BasicArray<double>::matrix(1, 1, tr.phi[d.tau]));
  auto th = tape.parameter(BasicArray<double>::scalar(theta));
  auto tau = stopping_time_node(phi_tau, th, {d}, {tr.increment(d.tau)}, eps_den);
  EXPECT_EQ(tau.value().item(), d.tau);
  const auto g = tape.backward(diff::sum(tau));
  return {g[th].item(), g[phi_tau].item()};
}

TEST(Surrogate, LinearAccumulatorIsExact) {
  const auto tr = accumulate(std::vector<double>(10, 0.4));
  const auto s = surrogate(tr, 1.0);
  EXPECT_DOUBLE_EQ(s.d_theta, 2.5);
  EXPECT_DOUBLE_EQ(s.d_phi, -2.5);
}

TEST(Surrogate, LinearTracesMatchContinuousCrossingTime) {
  // Phi_t = s t crosses theta at theta / s; the derivative 1 / s must be exact.
  for (double slope : {0.05, 0.3, 1.7, 12.0}) {
    for (double theta : {0.11, 0.9, 2.35}) {
      const auto tr = accumulate(std::vector<double>(200, slope));
      if (!stopping_time(tr, theta).crossed) continue;
      const auto s = surrogate(tr, theta);
      EXPECT_NEAR(s.d_theta, 1.0 / slope, 1e-12 / slope);
      EXPECT_NEAR(s.d_phi, -1.0 / slope, 1e-12 / slope);
    }
  }
}

TEST(Surrogate, MatchesInterpolatedCrossingOnIncreasingTraces) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> inc(0.05, 1.0), frac(0.1, 0.9);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> e(50);
    for (auto& v : e) v = inc(rng);
    const auto tr = accumulate(e);
    // theta strictly inside a random segment, away from its knots
    std::uniform_int_distribution<int> seg(1, 49);
    const int k = seg(rng);
    const double theta = tr.phi[k] + frac(rng) * e[k];
    const std::span<const double> phi(tr.phi.data() + 1, 50);
    const double h = 1e-7 * e[k];
    const double fd = (reference::interpolated_crossing(phi, theta + h) -
                       reference::interpolated_crossing(phi, theta - h)) / (2 * h);
    const double s = surrogate(tr, theta).d_theta;
    EXPECT_NEAR(s, fd, 1e-6 * std::abs(fd));
  }
}

TEST(Surrogate, DenominatorGuardKeepsSign) {
  EXPECT_EQ(guarded_increment(1e-6, 1e-3), 1e-3);
  EXPECT_EQ(guarded_increment(-1e-6, 1e-3), -1e-3);
  EXPECT_EQ(guarded_increment(0.0, 1e-3), 1e-3);
  EXPECT_EQ(guarded_increment(0.5, 1e-3), 0.5);
  const auto tr = accumulate(std::vector<double>{0.9999999, 1e-6});
  const auto s = surrogate(tr, 0.99999995);
  EXPECT_DOUBLE_EQ(s.d_theta, 1e3);
}

TEST(Surrogate, ForwardIsExactIntegerRule) {
  std::mt19937_64 rng(29);
  std::vector<backbone::HiddenTrace> traces;
  for (int i = 0; i < 16; ++i) traces.push_back(random_trace(25, 6, 2, rng));
  auto p = init_params({6, 8}, 0.2, 4);
  p.at("theta") = Array::scalar(static_cast<float>(init_theta(traces, p, 0.75)));
  std::vector<const backbone::HiddenTrace*> batch;
  for (const auto& t : traces) batch.push_back(&t);
  Tape<float> tape;
  diff::Bound<float> b(tape, p);
  const auto out = run_batch(tape, b, batch, Options{});
  const auto plain = decide_all(traces, p, Options{});
  for (std::size_t i = 0; i < traces.size(); ++i) {
    EXPECT_EQ(out.tau.value()[i], static_cast<float>(out.decisions[i].tau));
    EXPECT_EQ(out.decisions[i].tau, plain[i].tau);
    EXPECT_EQ(out.decisions[i].crossed, plain[i].crossed);
  }
}

TEST(Censoring, CensoredRowsPassNoGradient) {
  std::mt19937_64 rng(31);
  std::vector<backbone::HiddenTrace> traces;
  for (int i = 0; i < 8; ++i) traces.push_back(random_trace(20, 5, 2, rng));
  auto p = init_params({5, 6}, 0.1, 9);
  p.at("theta") = Array::scalar(1e6f);
  std::vector<const backbone::HiddenTrace*> batch;
  for (const auto& t : traces) batch.push_back(&t);
  Tape<float> tape;
  diff::Bound<float> b(tape, p);
  const auto out = run_batch(tape, b, batch, Options{});
  for (const auto& d : out.decisions) EXPECT_FALSE(d.crossed);
  const auto loss = diff::sum(out.tau) + diff::cross_entropy(out.readout, std::vector<int>(8, 1));
  const auto g = b.gradients(tape.backward(loss));
  for (const auto& [name, value] : g)
    for (float v : value.values()) EXPECT_EQ(v, 0.0f) << name;
}

TEST(Censoring, AllCensoredTrainingLeavesParamsUnchanged) {
  std::mt19937_64 rng(37);
  std::vector<backbone::HiddenTrace> traces;
  std::vector<int> labels;
  for (int i = 0; i < 12; ++i) {
    traces.push_back(random_trace(20, 5, 2, rng));
    labels.push_back(i % 2);
  }
  auto p = init_params({5, 6}, 0.1, 9);
  p.at("theta") = Array::scalar(1e6f);
  training::SelfPenaltyOptions opt;
  opt.epochs = 10;
  opt.censor_weight = 0.0;
  const auto r = training::train_self_penalty(traces, labels, p, opt);
  EXPECT_EQ(r.params, p);
}

TEST(Readout, SingleStepPoliciesAgree) {
  std::mt19937_64 rng(41);
  const auto tr = random_trace(1, 3, 4, rng);
  const Decision d{1, true, -1, 0.0};
  EXPECT_EQ(readout(tr, d, ReadoutPolicy::kSumToTau).choice, readout(tr, d, ReadoutPolicy::kAtTau).choice);
  const auto a = readout(tr, d, ReadoutPolicy::kSumToTau).probabilities;
  const auto c = readout(tr, d, ReadoutPolicy::kAtTau).probabilities;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_DOUBLE_EQ(a[i], c[i]);
}

TEST(Readout, ConstantLogitsPoliciesAgreeOnChoice) {
  backbone::HiddenTrace tr;
  tr.n_steps = 12;
  tr.hidden = 1;
  tr.classes = 3;
  tr.h.assign(12, 0.0f);
  for (int t = 0; t < 12; ++t)
    for (float v : {0.2f, 1.1f, -0.4f}) tr.logits.push_back(v);
  for (int tau = 1; tau <= 12; ++tau) {
    const Decision d{tau, true, -1, 0.0};
    EXPECT_EQ(readout(tr, d, ReadoutPolicy::kSumToTau).choice, 1);
    EXPECT_EQ(readout(tr, d, ReadoutPolicy::kAtTau).choice, 1);
  }
}

TEST(Readout, DriftingLogitsCrossover) {
  // l_t = (1 - t/N, t/N). Enumerate the oracle choice for each tau directly.
  const int n = 20;
  backbone::HiddenTrace tr;
  tr.n_steps = n;
  tr.hidden = 1;
  tr.classes = 2;
  tr.h.assign(n, 0.0f);
  for (int t = 1; t <= n; ++t) {
    tr.logits.push_back(1.0f - static_cast<float>(t) / n);
    tr.logits.push_back(static_cast<float>(t) / n);
  }
  bool found = false;
  for (int tau = 1; tau <= n; ++tau) {
    double s0 = 0, s1 = 0;
    for (int t = 1; t <= tau; ++t) {
      s0 += 1.0 - static_cast<double>(t) / n;
      s1 += static_cast<double>(t) / n;
    }
    const int at_oracle = static_cast<double>(tau) / n > 1.0 - static_cast<double>(tau) / n ? 1 : 0;
    const int sum_oracle = s1 > s0 ? 1 : 0;
    const Decision d{tau, true, -1, 0.0};
    EXPECT_EQ(readout(tr, d, ReadoutPolicy::kAtTau).choice, at_oracle) << tau;
    // tau = N - 1 is an exact tie of the sums; argmax there is not meaningful.
    if (std::abs(s1 - s0) > 1e-6) EXPECT_EQ(readout(tr, d, ReadoutPolicy::kSumToTau).choice, sum_oracle) << tau;
    found = found || (at_oracle == 1 && sum_oracle == 0);
  }
  EXPECT_TRUE(found);
  EXPECT_EQ(readout(tr, Decision{15, true, -1, 0.0}, ReadoutPolicy::kAtTau).choice, 1);
  EXPECT_EQ(readout(tr, Decision{15, true, -1, 0.0}, ReadoutPolicy::kSumToTau).choice, 0);
}

TEST(Readout, InvalidPolicyTokenThrows) {
  EXPECT_THROW(parse_policy("at-the-end"), ConfigError);
  EXPECT_EQ(parse_policy("at-tau"), ReadoutPolicy::kAtTau);
  EXPECT_EQ(parse_policy("sum-to-tau"), ReadoutPolicy::kSumToTau);
}

TEST(Readout, TauSlopeIsCurrentLogit) {
  std::mt19937_64 rng(43);
  const auto tr = random_trace(10, 2, 2, rng);
  const std::vector<Decision> ds{{6, true, -1, 0.0}};
  for (auto policy : {ReadoutPolicy::kSumToTau, ReadoutPolicy::kAtTau}) {
    Tape<double> tape;
    auto tau = tape.parameter(BasicArray<double>::matrix(1, 1, 6.0));
    auto z = readout_node(tau, {&tr}, ds, policy);
    const double g = tape.backward(diff::sum(z)).operator[](tau).item();
    const double l6 = tr.logits_at(5)[0] + tr.logits_at(5)[1];
    const double l5 = tr.logits_at(4)[0] + tr.logits_at(4)[1];
    EXPECT_NEAR(g, policy == ReadoutPolicy::kSumToTau ? l6 : l6 - l5, 1e-6);
  }
}

TEST(InitTheta, UsesMedianAccumulatedEvidence) {
  std::mt19937_64 rng(47);
  std::vector<backbone::HiddenTrace> traces;
  for (int i = 0; i < 11; ++i) traces.push_back(random_trace(15, 4, 2, rng));
  const auto p = init_params({4, 5}, 0.3, 2);
  std::vector<double> finals, at5;
  for (const auto& tr : traces) {
    double acc = 0;
    for (int t = 0; t < tr.n_steps; ++t) {
      acc += evidence(std::span<const float>(tr.h_at(t), 4), p);
      if (t == 4) at5.push_back(acc);
    }
    finals.push_back(acc);
  }
  std::sort(finals.begin(), finals.end());
  std::sort(at5.begin(), at5.end());
  EXPECT_NEAR(init_theta(traces, p, 0.75), 0.75 * finals[5], 1e-9);
  EXPECT_NEAR(init_theta(traces, p, 1.0, 5), at5[5], 1e-9);
}

}  // namespace
}  // namespace rtify::stopping
