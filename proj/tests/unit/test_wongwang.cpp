#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "gradcheck.hpp"
#include "rtify/error.hpp"
#include "rtify/reference.hpp"
#include "rtify/rng.hpp"
#include "rtify/wongwang.hpp"

namespace rtify::wongwang {
namespace {

using diff::BasicArray;

// Zero-noise fixture; the baseline drive sits above the transfer threshold so
// the circuit decides without noise.
WwParams quiet() {
  WwParams p;
  p.sigma = 0.0;
  p.i0 = 0.45;
  return p;
}

// Static two-class drive with the given logit gap, favoring class 0.
Drive gap_drive(double gap) { return Drive::constant({gap / 2, -gap / 2}); }

double max_row(const WwRun& run, int step, int m) {
  return *std::max_element(run.trajectory.begin() + step * m, run.trajectory.begin() + (step + 1) * m);
}

TEST(Transfer, BelowThresholdIsZero) {
  const WwParams p;
  EXPECT_EQ(transfer(p.b / p.a - 0.01, p), 0.0);
  EXPECT_EQ(transfer(-3.0, p), 0.0);
}

TEST(Transfer, LimitAtZeroPlusIsGammaOverD) {
  const WwParams p;
  const double x = (p.b + 1e-9) / p.a;
  EXPECT_NEAR(transfer(x, p), p.gamma / p.d, 1e-6);
  EXPECT_NEAR(transfer_parts(1e-7, p.d, p.gamma, false).f, p.gamma / p.d, 1e-6);
}

TEST(Transfer, LargeDriveIsLinear) {
  const WwParams p;
  const double u = 1e4;
  EXPECT_NEAR(transfer((u + p.b) / p.a, p) / (p.gamma * u), 1.0, 1e-9);
}

TEST(Transfer, PartialsMatchFiniteDifferences) {
  for (double u : {-0.5, 2e-5, 0.3, 4.0, 80.0}) {
    for (bool cont : {false, true}) {
      if (!cont && u <= 0) continue;
      const double d = 0.154, g = 0.641, h = 1e-6;
      const auto t = transfer_parts(u, d, g, cont);
      const double fu = (transfer_parts(u + h, d, g, cont).f - transfer_parts(u - h, d, g, cont).f) / (2 * h);
      const double fd = (transfer_parts(u, d + h, g, cont).f - transfer_parts(u, d - h, g, cont).f) / (2 * h);
      const double fg = (transfer_parts(u, d, g + h, cont).f - transfer_parts(u, d, g - h, cont).f) / (2 * h);
      EXPECT_NEAR(t.df_du, fu, 1e-5 * std::max(1.0, std::abs(fu))) << u;
      EXPECT_NEAR(t.df_dd, fd, 1e-5 * std::max(1.0, std::abs(fd))) << u;
      EXPECT_NEAR(t.df_dgamma, fg, 1e-5 * std::max(1.0, std::abs(fg))) << u;
    }
  }
}

TEST(WwStep, EqualDrivesStaySymmetric) {
  const auto p = quiet();
  std::vector<double> s{0.2, 0.2};
  const std::vector<double> l{0.7, 0.7}, noise{0.0, 0.0};
  for (int t = 0; t < 500; ++t) {
    s = ww_step(s, l, p, noise);
    ASSERT_EQ(s[0], s[1]) << t;
  }
}

TEST(WwStep, QuiescentFixedPoint) {
  auto p = quiet();
  p.i0 = 0.3;
  ASSERT_LT(p.i0, p.b / p.a);
  std::vector<double> s{0.0, 0.0, 0.0};
  p.populations = 3;
  const std::vector<double> zero(3, 0.0);
  for (int t = 0; t < 100; ++t) s = ww_step(s, zero, p, zero);
  EXPECT_EQ(s, zero);
}

TEST(WwStep, StateStaysInUnitInterval) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 50.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  WwParams p;
  p.populations = 4;
  p.sigma = 5.0;
  p.j_self = 3.0;
  for (int rep = 0; rep < 2000; ++rep) {
    std::vector<double> s(4), l(4), eta(4);
    for (auto& v : s) v = u(rng);
    for (auto& v : l) v = g(rng);
    for (auto& v : eta) v = g(rng);
    for (double v : ww_step(s, l, p, eta)) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(WwStep, PermutationEquivariance) {
  auto p = quiet();
  p.populations = 4;
  p.i0 = 0.42;
  std::vector<double> s{0.1, 0.35, 0.2, 0.05};
  const std::vector<double> l{1.3, -0.2, 0.4, 2.2}, noise(4, 0.0);
  const std::vector<int> perm{2, 0, 3, 1};
  auto permute = [&](const std::vector<double>& v) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[perm[i]];
    return out;
  };
  auto sp = permute(s);
  const auto lp = permute(l);
  for (int t = 0; t < 300; ++t) {
    s = ww_step(s, l, p, noise);
    sp = ww_step(sp, lp, p, noise);
    ASSERT_EQ(sp, permute(s)) << t;
  }
}

TEST(WwRun, PermutedDrivesPermuteDecision) {
  auto p = quiet();
  p.populations = 3;
  const auto a = ww_run(Drive::constant({0.5, 3.0, -1.0}), p, 3000, 1, 0.0);
  const auto b = ww_run(Drive::constant({3.0, -1.0, 0.5}), p, 3000, 1, 0.0);
  ASSERT_TRUE(a.decision.crossed);
  EXPECT_EQ(a.decision.tau, b.decision.tau);
  EXPECT_EQ(a.decision.choice, 1);
  EXPECT_EQ(b.decision.choice, 0);
}

TEST(WwRun, ZeroNoiseIsDeterministic) {
  const auto p = quiet();
  const auto a = ww_run(gap_drive(1.0), p, 2000, 5, 0.0, true);
  const auto b = ww_run(gap_drive(1.0), p, 2000, 99, 0.0, true);
  EXPECT_EQ(a.trajectory, b.trajectory);
}

TEST(WwRun, SameSeedSameNoisyTrajectory) {
  const WwParams p;
  const auto a = ww_run(gap_drive(1.0), p, 2000, 5, 0.0, true);
  const auto b = ww_run(gap_drive(1.0), p, 2000, 5, 0.0, true);
  EXPECT_EQ(a.trajectory, b.trajectory);
  EXPECT_NE(a.trajectory, ww_run(gap_drive(1.0), p, 2000, 6, 0.0, true).trajectory);
}

TEST(WwRun, ZeroThresholdDecidesAtFirstStep) {
  auto p = quiet();
  p.theta = 0.0;
  const auto r = ww_run(gap_drive(1.0), p, 100, 1, 0.0);
  EXPECT_TRUE(r.decision.crossed);
  EXPECT_EQ(r.decision.tau, 1);
}

TEST(WwRun, UnitThresholdAlwaysCensored) {
  WwParams p;
  p.theta = 1.0;
  p.i0 = 0.6;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = ww_run(gap_drive(4.0), p, 1500, seed, 0.0);
    EXPECT_FALSE(r.decision.crossed);
    EXPECT_EQ(r.decision.tau, 1500);
  }
}

TEST(WwRun, InvalidArgumentsRejected) {
  WwParams p;
  p.dt = 30.0;
  EXPECT_THROW(ww_run(gap_drive(1.0), p, 10, 1, 0.0), ConfigError);
  EXPECT_THROW(ww_run(gap_drive(1.0), WwParams{}, 0, 1, 0.0), ConfigError);
  EXPECT_THROW(ww_run(Drive::constant({1.0, 0.0, 0.0}), WwParams{}, 10, 1, 0.0), ShapeError);
}

TEST(WwMonteCarlo, FavoredPopulationWinsAtGapTwo) {
  const WwParams p;
  int wins = 0, decided = 0;
  for (std::uint64_t i = 0; i < 500; ++i) {
    const auto r = ww_run(gap_drive(2.0), p, 3000, derive_seed(1, {i}), 0.0);
    decided += r.decision.crossed;
    wins += r.decision.crossed && r.decision.choice == 0;
  }
  EXPECT_GE(wins, 475);
  EXPECT_GT(decided, 450);
}

TEST(WwMonteCarlo, MeanTauDecreasesWithGap) {
  const WwParams p;
  double prev = 1e9;
  for (double gap : {0.5, 1.0, 2.0}) {
    double acc = 0;
    for (std::uint64_t i = 0; i < 500; ++i) acc += ww_run(gap_drive(gap), p, 3000, derive_seed(2, {i}), 0.0).decision.tau;
    EXPECT_LT(acc / 500, prev) << gap;
    prev = acc / 500;
  }
}

TEST(WwRun, HalvingDtBarelyMovesCrossingTime) {
  auto p = quiet();
  const auto coarse = ww_run(gap_drive(2.0), p, 4000, 1, 0.0);
  p.dt = 0.5;
  const auto fine = ww_run(gap_drive(2.0), p, 8000, 1, 0.0);
  ASSERT_TRUE(coarse.decision.crossed && fine.decision.crossed);
  EXPECT_LT(std::abs(fine.decision.rt_ms - coarse.decision.rt_ms) / coarse.decision.rt_ms, 0.05);
}

TEST(WwSurrogate, ThresholdGradientMatchesInterpolatedCrossing) {
  auto p = quiet();
  const int m = 2;
  for (double gap : {1.0, 2.0, 3.0}) {
    const auto run = ww_run(gap_drive(gap), p, 4000, 1, 0.0, true, true);
    ASSERT_TRUE(run.decision.crossed);
    std::vector<double> phi;
    for (int t = 1; t <= run.steps; ++t) phi.push_back(max_row(run, t, m));
    const int tau = run.decision.tau;
    ASSERT_GT(phi[tau - 1], phi[tau - 2]);
    diff::Tape<double> tape;
    auto phi_tau = tape.parameter(BasicArray<double>::matrix(1, 1, phi[tau - 1]));
    auto theta = tape.parameter(BasicArray<double>::scalar(p.theta));
    auto node = stopping::stopping_time_node(phi_tau, theta, {run.decision}, {phi[tau - 1] - phi[tau - 2]}, 1e-3);
    const double surrogate = tape.backward(diff::sum(node))[theta].item();
    // Keep theta between the knots on both sides of the finite difference.
    const double h = 1e-3 * std::min(phi[tau - 1] - p.theta, p.theta - phi[tau - 2]);
    const double fd = (reference::interpolated_crossing(phi, p.theta + h, max_row(run, 0, m)) -
                       reference::interpolated_crossing(phi, p.theta - h, max_row(run, 0, m))) / (2 * h);
    EXPECT_NEAR(surrogate, fd, 1e-3 * std::abs(fd)) << gap;
  }
}

TEST(WwStepNode, MatchesPlainStep) {
  WwParams p;
  p.i0 = 0.45;
  const auto raw = testing::to_double(to_raw(p));
  const auto back = from_raw(to_raw(p), p);
  diff::Tape<double> tape;
  diff::Bound<double> b(tape, raw);
  const auto v = natural_vars(tape, b);
  const auto s0 = BasicArray<double>(diff::Shape{2, 2}, {0.1, 0.3, 0.6, 0.2});
  const auto drive = BasicArray<double>(diff::Shape{2, 2}, {1.0, -1.0, 0.2, 0.4});
  const auto noise = BasicArray<double>(diff::Shape{2, 2}, {0.5, -1.2, 0.0, 2.0});
  const auto out = ww_step_node(tape.constant(s0), v, drive, noise, p.dt, false).value();
  for (std::size_t r = 0; r < 2; ++r) {
    const std::vector<double> s{s0(r, 0), s0(r, 1)}, l{drive(r, 0), drive(r, 1)}, e{noise(r, 0), noise(r, 1)};
    const auto plain = ww_step(s, l, back, e);
    EXPECT_NEAR(out(r, 0), plain[0], 1e-9);
    EXPECT_NEAR(out(r, 1), plain[1], 1e-9);
  }
}

TEST(WwStepNode, VjpMatchesFiniteDifferences) {
  // Ten fused steps on a two-trial batch, active regime (u > 0 throughout).
  WwParams p;
  p.i0 = 0.45;
  p.sigma = 0.05;
  auto at = testing::to_double(to_raw(p));
  at.emplace_back("S0", BasicArray<double>(diff::Shape{2, 2}, {0.15, 0.3, 0.25, 0.1}));
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  std::vector<BasicArray<double>> noise;
  for (int t = 0; t < 10; ++t) {
    auto n = BasicArray<double>::matrix(2, 2);
    for (auto& x : n.values()) x = g(rng);
    noise.push_back(n);
  }
  const auto drive = BasicArray<double>(diff::Shape{2, 2}, {1.5, -0.5, 0.3, 0.9});
  const auto w = BasicArray<double>(diff::Shape{2, 2}, {1.0, -2.0, 0.5, 3.0});
  for (bool cont : {false, true}) {
    const auto r = testing::grad_check(
        [&](auto& tape, const auto& bound) {
          const auto v = natural_vars(tape, bound);
          auto s = bound["S0"];
          for (const auto& n : noise) s = ww_step_node(s, v, drive, n, p.dt, cont);
          return diff::sum(diff::mul(s, tape.constant(w)));
        },
        at, 1e-5, 1e-9);
    EXPECT_LE(r.max_rel_error, 1e-3) << "continuous=" << cont << " index " << r.worst_index;
  }
}

TEST(WwRaw, RoundTrip) {
  WwParams p;
  const auto q = from_raw(to_raw(p), p);
  EXPECT_NEAR(q.a, p.a, 1e-3 * p.a);
  EXPECT_NEAR(q.theta, p.theta, 1e-6);
  EXPECT_NEAR(q.sigma, p.sigma, 1e-6);
  p.sigma = 0.0;
  EXPECT_FALSE(to_raw(p).contains("log_sigma"));
  EXPECT_EQ(from_raw(to_raw(p), p).sigma, 0.0);
}

TEST(WwFit, ZeroLearningRateLeavesParamsUnchanged) {
  std::vector<Drive> drives;
  std::vector<int> labels, conds;
  for (int i = 0; i < 20; ++i) {
    drives.push_back(gap_drive(i % 2 ? 1.0 : 3.0));
    labels.push_back(0);
    conds.push_back(i % 2);
  }
  const std::vector<std::vector<double>> ref{{500, 620, -700, 800}, {350, 410, 460, 520}};
  const WwParams init;
  FitOptions opt;
  opt.epochs = 2;
  opt.lr = 0.0;
  opt.max_steps = 1200;
  const auto r = ww_fit(drives, labels, conds, ref, init, opt);
  EXPECT_EQ(r.raw, to_raw(init));
  ASSERT_EQ(r.log.size(), 2u);
}

}  // namespace
}  // namespace rtify::wongwang
