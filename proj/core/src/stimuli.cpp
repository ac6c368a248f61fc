#include "rtify/stimuli.hpp"

#include <cmath>
#include <numbers>

#include "rtify/error.hpp"
#include "rtify/rng.hpp"

namespace rtify::stimuli {

namespace {

// cos/sin with exact zeros at multiples of 90 degrees.
void unit_vector(double deg, double& ux, double& uy) {
  const double rad = deg * std::numbers::pi / 180.0;
  ux = std::cos(rad);
  uy = std::sin(rad);
  if (std::abs(ux) < 1e-12) ux = 0.0;
  if (std::abs(uy) < 1e-12) uy = 0.0;
}

double wrap(double v, double size) {
  v = std::fmod(v, size);
  if (v < 0.0) v += size;
  if (v >= size) v = 0.0;
  return v;
}

double wrapped_delta(double a, double b, double size) {
  double d = b - a;
  if (d > size / 2) d -= size;
  if (d < -size / 2) d += size;
  return d;
}

}  // namespace

void RdmConfig::validate() const {
  if (n_dots < 1) throw ConfigError("stimuli: n_dots must be >= 1");
  if (!(coherence >= 0.0 && coherence <= 1.0)) throw ConfigError("stimuli: coherence must lie in [0,1]");
  if (n_frames < 1) throw ConfigError("stimuli: n_frames must be >= 1");
  if (!(frame_rate_hz > 0.0)) throw ConfigError("stimuli: frame_rate_hz must be positive");
  if (!(field_size > 0.0)) throw ConfigError("stimuli: field_size must be positive");
  if (!(dot_step >= 0.0) || dot_step >= field_size / 2) {
    throw ConfigError("stimuli: dot_step must lie in [0, field_size/2)");
  }
}

StimulusClip generate_rdm(const RdmConfig& config) {
  config.validate();
  StimulusClip clip;
  clip.n_frames = config.n_frames;
  clip.n_dots = config.n_dots;
  clip.field_size = config.field_size;
  clip.direction_deg = config.direction_deg;
  clip.coherence = config.coherence;
  clip.positions.resize(2 * static_cast<std::size_t>(config.n_frames) * config.n_dots);

  Rng rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double size = config.field_size;
  for (int d = 0; d < config.n_dots; ++d) {
    clip.positions[2 * d] = unit(rng) * size;
    clip.positions[2 * d + 1] = unit(rng) * size;
  }
  double tx = 0, ty = 0;
  unit_vector(config.direction_deg, tx, ty);
  for (int f = 1; f < config.n_frames; ++f) {
    const std::size_t prev = 2 * static_cast<std::size_t>(f - 1) * config.n_dots;
    const std::size_t cur = 2 * static_cast<std::size_t>(f) * config.n_dots;
    for (int d = 0; d < config.n_dots; ++d) {
      const double u = unit(rng);
      const double noise_angle = unit(rng) * 2.0 * std::numbers::pi;
      double dx = tx, dy = ty;
      if (!(u < config.coherence)) {
        dx = std::cos(noise_angle);
        dy = std::sin(noise_angle);
      }
      clip.positions[cur + 2 * d] = wrap(clip.positions[prev + 2 * d] + config.dot_step * dx, size);
      clip.positions[cur + 2 * d + 1] = wrap(clip.positions[prev + 2 * d + 1] + config.dot_step * dy, size);
    }
  }
  return clip;
}

StimulusClip mirror(const StimulusClip& clip) {
  StimulusClip out = clip;
  for (std::size_t i = 0; i < out.positions.size(); i += 2) {
    out.positions[i] = wrap(clip.field_size - clip.positions[i], clip.field_size);
  }
  out.direction_deg = std::fmod(540.0 - clip.direction_deg, 360.0);
  return out;
}

std::vector<std::uint8_t> render_frames(const StimulusClip& clip, int resolution) {
  if (resolution < 1) throw ConfigError("render_frames: resolution must be >= 1");
  const std::size_t plane = static_cast<std::size_t>(resolution) * resolution;
  std::vector<std::uint8_t> frames(plane * clip.n_frames, 0);
  const double scale = resolution / clip.field_size;
  for (int f = 0; f < clip.n_frames; ++f) {
    for (int d = 0; d < clip.n_dots; ++d) {
      const int px = std::min(resolution - 1, static_cast<int>(clip.x(f, d) * scale));
      const int py = std::min(resolution - 1, static_cast<int>(clip.y(f, d) * scale));
      frames[f * plane + static_cast<std::size_t>(py) * resolution + px] = 1;
    }
  }
  return frames;
}

EvidenceStream motion_energy(const StimulusClip& clip) {
  if (clip.n_frames < 2) throw ConfigError("motion_energy: clip needs at least 2 frames");
  EvidenceStream out;
  out.n_frames = clip.n_frames;
  out.channels.assign(static_cast<std::size_t>(clip.n_frames) * kChannels, 0.0f);
  const double norm = 1.0 / clip.n_dots;
  for (int f = 1; f < clip.n_frames; ++f) {
    std::array<int, kChannels> counts{};
    for (int d = 0; d < clip.n_dots; ++d) {
      const double dx = wrapped_delta(clip.x(f - 1, d), clip.x(f, d), clip.field_size);
      const double dy = wrapped_delta(clip.y(f - 1, d), clip.y(f, d), clip.field_size);
      if (dx == 0.0 && dy == 0.0) continue;
      const double angle = std::atan2(dy, dx) * 180.0 / std::numbers::pi;
      for (int k = 0; k < kChannels; ++k) {
        if (std::abs(std::remainder(angle - 45.0 * k, 360.0)) < 45.0) ++counts[k];
      }
    }
    for (int k = 0; k < kChannels; ++k) {
      out.channels[static_cast<std::size_t>(f) * kChannels + k] = static_cast<float>(counts[k] * norm);
    }
  }
  for (int k = 0; k < kChannels; ++k) out.channels[k] = out.channels[kChannels + k];
  return out;
}

}  // namespace rtify::stimuli
