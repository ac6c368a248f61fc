#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "rtify/dataset.hpp"
#include "rtify/error.hpp"
#include "rtify/rng.hpp"
#include "rtify/stimuli.hpp"
#include "tempdir.hpp"

namespace rtify::stimuli {
namespace {

double wrapped(double d, double size) {
  if (d > size / 2) d -= size;
  if (d < -size / 2) d += size;
  return d;
}

double channel_mean(const EvidenceStream& s, int k) {
  double acc = 0;
  for (int f = 0; f < s.n_frames; ++f) acc += s.at(f, k);
  return acc / s.n_frames;
}

RdmConfig small(double coherence, std::uint64_t seed) {
  RdmConfig c;
  c.n_dots = 50;
  c.n_frames = 40;
  c.coherence = coherence;
  c.seed = seed;
  return c;
}

TEST(Rdm, FullCoherenceMovesEveryDotByStep) {
  auto cfg = small(1.0, 5);
  cfg.direction_deg = 180.0;
  const auto clip = generate_rdm(cfg);
  for (int f = 1; f < clip.n_frames; ++f) {
    for (int d = 0; d < clip.n_dots; ++d) {
      EXPECT_NEAR(wrapped(clip.x(f, d) - clip.x(f - 1, d), clip.field_size), -cfg.dot_step, 1e-9);
      EXPECT_NEAR(wrapped(clip.y(f, d) - clip.y(f - 1, d), clip.field_size), 0.0, 1e-9);
    }
  }
}

TEST(Rdm, ZeroCoherenceHasNoNetDrift) {
  // 10^4 dot-frames; each displacement component has variance step^2 / 2.
  auto cfg = small(0.0, 9);
  cfg.n_dots = 100;
  cfg.n_frames = 101;
  const auto clip = generate_rdm(cfg);
  double sx = 0, sy = 0;
  int n = 0;
  for (int f = 1; f < clip.n_frames; ++f) {
    for (int d = 0; d < clip.n_dots; ++d, ++n) {
      sx += wrapped(clip.x(f, d) - clip.x(f - 1, d), clip.field_size);
      sy += wrapped(clip.y(f, d) - clip.y(f - 1, d), clip.field_size);
    }
  }
  const double sigma = cfg.dot_step / std::sqrt(2.0 * n);
  EXPECT_LT(std::abs(sx / n), 3 * sigma);
  EXPECT_LT(std::abs(sy / n), 3 * sigma);
}

TEST(Rdm, PositionsStayInField) {
  const auto clip = generate_rdm(small(0.3, 2));
  for (double p : clip.positions) {
    EXPECT_GE(p, 0.0);
    EXPECT_LT(p, clip.field_size);
  }
}

TEST(Rdm, CanonicalSweepIsAccepted) {
  const std::vector<double> expected{0.008, 0.016, 0.032, 0.064, 0.128, 0.256, 0.512};
  ASSERT_EQ(kCanonicalCoherences.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_DOUBLE_EQ(kCanonicalCoherences[i], expected[i]);
    EXPECT_NO_THROW(generate_rdm(small(kCanonicalCoherences[i], i)));
  }
}

TEST(Rdm, InvalidConfigRejected) {
  auto bad = small(1.5, 0);
  EXPECT_THROW(generate_rdm(bad), ConfigError);
  bad = small(0.5, 0);
  bad.n_dots = 0;
  EXPECT_THROW(generate_rdm(bad), ConfigError);
  bad = small(0.5, 0);
  bad.n_frames = 0;
  EXPECT_THROW(generate_rdm(bad), ConfigError);
}

TEST(Rdm, SameSeedIsBitIdentical) {
  const auto a = generate_rdm(small(0.256, 77));
  const auto b = generate_rdm(small(0.256, 77));
  EXPECT_EQ(a.positions, b.positions);
  EXPECT_EQ(motion_energy(a).channels, motion_energy(b).channels);
  EXPECT_NE(a.positions, generate_rdm(small(0.256, 78)).positions);
}

TEST(Rdm, DotsMoveIndependently) {
  // Indicator "dot moved within 45 degrees of rightward" for dots 0 and 1 over 10^4 frames.
  std::vector<double> a, b;
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto cfg = small(0.5, derive_seed(3, {s}));
    cfg.n_dots = 2;
    cfg.n_frames = 101;
    const auto clip = generate_rdm(cfg);
    for (int f = 1; f < clip.n_frames; ++f) {
      for (int d = 0; d < 2; ++d) {
        const double dx = wrapped(clip.x(f, d) - clip.x(f - 1, d), clip.field_size);
        const double dy = wrapped(clip.y(f, d) - clip.y(f - 1, d), clip.field_size);
        (d == 0 ? a : b).push_back(std::abs(std::atan2(dy, dx)) < std::numbers::pi / 4 ? 1.0 : 0.0);
      }
    }
  }
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  EXPECT_LT(std::abs(cov / std::sqrt(va * vb)), 0.05);
}

TEST(MotionEnergy, FullCoherenceRightward) {
  // Every displacement lies at exactly 0 degrees: channel 0 counts all dots,
  // the two diagonals at +-45 are excluded by the strict bound.
  double right = 0, left = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto e = motion_energy(generate_rdm(small(1.0, s)));
    right += channel_mean(e, 0);
    left += channel_mean(e, 4);
  }
  EXPECT_DOUBLE_EQ(right / 100, 1.0);
  EXPECT_DOUBLE_EQ(left / 100, 0.0);
}

TEST(MotionEnergy, ChannelMeansMatchMixtureAtHalfCoherence) {
  // Oracle: target channel c + (1 - c) / 4, opposite channel (1 - c) / 4
  // (each channel spans 90 of the 360 noise degrees).
  const double c = 0.5;
  double right = 0, left = 0;
  int frames = 0, dots = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto clip = generate_rdm(small(c, 1000 + s));
    const auto e = motion_energy(clip);
    right += channel_mean(e, 0);
    left += channel_mean(e, 4);
    frames = clip.n_frames;
    dots = clip.n_dots;
  }
  right /= 100;
  left /= 100;
  const double n = 100.0 * dots * (frames - 1);
  const double p_right = c + (1 - c) / 4, p_left = (1 - c) / 4;
  EXPECT_NEAR(right, p_right, 4 * std::sqrt(p_right * (1 - p_right) / n));
  EXPECT_NEAR(left, p_left, 4 * std::sqrt(p_left * (1 - p_left) / n));
}

TEST(MotionEnergy, MirrorSwapsLeftAndRight) {
  const auto clip = generate_rdm(small(0.3, 42));
  const auto e = motion_energy(clip);
  const auto m = motion_energy(mirror(clip));
  for (int f = 0; f < e.n_frames; ++f) {
    for (int k = 0; k < kChannels; ++k) EXPECT_EQ(m.at(f, (kChannels + 4 - k) % kChannels), e.at(f, k)) << f << ":" << k;
  }
}

TEST(MotionEnergy, ZeroCoherenceChannelsEqual) {
  std::array<double, kChannels> mean{};
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto e = motion_energy(generate_rdm(small(0.0, 500 + s)));
    for (int k = 0; k < kChannels; ++k) mean[k] += channel_mean(e, k) / 100;
  }
  // Per channel the fraction is Bernoulli(1/4) over 100 x 50 x 39 dot-frames.
  const double sigma = std::sqrt(0.25 * 0.75 / (100.0 * 50 * 39));
  for (int k = 0; k < kChannels; ++k) EXPECT_NEAR(mean[k], 0.25, 3 * std::sqrt(2.0) * sigma) << k;
}

TEST(MotionEnergy, FirstFrameReplicatesSecond) {
  const auto e = motion_energy(generate_rdm(small(0.4, 1)));
  for (int k = 0; k < kChannels; ++k) EXPECT_EQ(e.at(0, k), e.at(1, k));
}

TEST(MotionEnergy, SingleFrameClipRejected) {
  auto cfg = small(0.5, 0);
  cfg.n_frames = 1;
  EXPECT_THROW(motion_energy(generate_rdm(cfg)), ConfigError);
}

TEST(MotionEnergy, TargetChannelIncreasesOverSweep) {
  double prev = -1;
  for (std::size_t i = 0; i < kCanonicalCoherences.size(); ++i) {
    double acc = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
      auto cfg = small(kCanonicalCoherences[i], derive_seed(11, {i, s}));
      cfg.n_dots = 100;
      cfg.n_frames = 150;
      acc += channel_mean(motion_energy(generate_rdm(cfg)), 0);
    }
    EXPECT_GT(acc / 100, prev) << "coherence " << kCanonicalCoherences[i];
    prev = acc / 100;
  }
}

DatasetSpec tiny_spec(std::uint64_t seed) {
  DatasetSpec spec;
  spec.base.n_dots = 10;
  spec.base.n_frames = 8;
  spec.train_per_condition = 100;
  spec.seed = seed;
  return spec;
}

TEST(Dataset, SevenConditionsTimesHundred) {
  const auto ds = make_dataset(tiny_spec(1));
  EXPECT_EQ(ds.n_records(), 700u);
  EXPECT_EQ(ds.n_conditions(), 7);
  EXPECT_EQ(ds.manifest()["conditions"].size(), 7u);
}

TEST(Dataset, SameSeedGivesByteIdenticalFiles) {
  testing::TempDir a, b;
  auto spec = tiny_spec(4);
  spec.test_per_condition = 20;
  save_dataset(make_dataset(spec, 1), a.path());
  save_dataset(make_dataset(spec, 3), b.path());
  for (const char* f : {"manifest.json", "train.f32", "test.f32"}) {
    EXPECT_EQ(testing::slurp(a / f), testing::slurp(b / f)) << f;
  }
}

TEST(Dataset, RoundTripsThroughDisk) {
  testing::TempDir dir;
  const auto ds = make_dataset(tiny_spec(8));
  save_dataset(ds, dir.path());
  const auto back = load_dataset(dir.path());
  ASSERT_EQ(back.split("train").trials.size(), ds.split("train").trials.size());
  for (std::size_t i = 0; i < ds.split("train").trials.size(); ++i) {
    const auto& x = ds.split("train").trials[i];
    const auto& y = back.split("train").trials[i];
    EXPECT_EQ(x.label, y.label);
    EXPECT_EQ(x.condition, y.condition);
    EXPECT_EQ(x.stream.channels, y.stream.channels);
  }
}

TEST(Dataset, MissingDirectoryNamesPath) {
  try {
    load_dataset("/nonexistent/rtify_dataset");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/rtify_dataset"), std::string::npos);
  }
}

TEST(Dataset, LabelMarginalsBalancedAcrossSeeds) {
  // Each split is counterbalanced by construction, so look at the first
  // trial's label over 400 disjoint master seeds instead.
  int ones = 0;
  const int n = 400;
  for (int s = 0; s < n; ++s) {
    auto spec = tiny_spec(100 + s);
    spec.coherences = {0.1};
    spec.train_per_condition = 2;
    const auto ds = make_dataset(spec);
    ones += ds.split("train").trials.front().label;
  }
  EXPECT_NEAR(static_cast<double>(ones) / n, 0.5, 3 * std::sqrt(0.25 / n));
}

TEST(Dataset, CounterbalancedLabelsAreEqualShares) {
  const auto labels = counterbalanced_labels(99, 3, 5);
  std::array<int, 3> counts{};
  for (int l : labels) ++counts[l];
  EXPECT_EQ(counts[0], 33);
  EXPECT_EQ(counts[1], 33);
  EXPECT_EQ(counts[2], 33);
}

TEST(Dataset, ConditionsShareSeedsAndLabels) {
  const auto ds = make_dataset(tiny_spec(2));
  const auto& trials = ds.split("train").trials;
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(trials[i].label, trials[600 + i].label);
}

}  // namespace
}  // namespace rtify::stimuli
