#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace rtify::stimuli {

/// Coherence sweep of the classic random-dot-motion experiment.
inline constexpr std::array<double, 7> kCanonicalCoherences{0.008, 0.016, 0.032, 0.064, 0.128, 0.256, 0.512};

/// Number of directional motion-energy channels (45 degree spacing, channel 0 = rightward).
inline constexpr int kChannels = 8;

struct RdmConfig {
  int n_dots = 100;
  double coherence = 0.5;
  /// Target direction in degrees; 0 is rightward (+x), 180 leftward.
  double direction_deg = 0.0;
  int n_frames = 150;
  double frame_rate_hz = 75.0;
  double field_size = 200.0;
  /// Displacement per frame in pixels.
  double dot_step = 3.0;
  std::uint64_t seed = 0;

  void validate() const;
  double frame_ms() const { return 1000.0 / frame_rate_hz; }
};

/// Dot positions for every frame, stored frame-major as (x, y) pairs.
struct StimulusClip {
  int n_frames = 0;
  int n_dots = 0;
  double field_size = 0.0;
  double direction_deg = 0.0;
  double coherence = 0.0;
  std::vector<double> positions;

  double x(int frame, int dot) const { return positions[2 * (static_cast<std::size_t>(frame) * n_dots + dot)]; }
  double y(int frame, int dot) const { return positions[2 * (static_cast<std::size_t>(frame) * n_dots + dot) + 1]; }
};

/// Per-frame directional channels, n_frames x kChannels, row-major.
struct EvidenceStream {
  int n_frames = 0;
  std::vector<float> channels;

  float at(int frame, int channel) const { return channels[static_cast<std::size_t>(frame) * kChannels + channel]; }
};

/// Each dot on each frame moves dot_step along the target direction with
/// probability `coherence`, otherwise along a uniformly random direction.
/// Positions wrap toroidally. Every dot consumes the same number of random
/// draws per frame whatever the coherence, so two clips sharing a seed differ
/// only in which dots move coherently (coherent sets are nested in coherence).
StimulusClip generate_rdm(const RdmConfig& config);

/// Reflects the clip about the vertical midline (x -> field_size - x).
StimulusClip mirror(const StimulusClip& clip);

/// Binary raster of the dots, n_frames x resolution x resolution.
std::vector<std::uint8_t> render_frames(const StimulusClip& clip, int resolution);

/// Fraction of dots whose frame-to-frame displacement lies strictly within
/// 45 degrees of each canonical direction. Frame 0 copies frame 1.
EvidenceStream motion_energy(const StimulusClip& clip);

}  // namespace rtify::stimuli
