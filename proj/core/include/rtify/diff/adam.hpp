#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>

#include "rtify/diff/params.hpp"

namespace rtify::diff {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Rescale gradients so their global L2 norm is at most this value; 0 disables.
  double clip_norm = 0.0;
};

/// Adam with bias correction. Moments are created lazily per parameter name
/// and must keep the shape they were created with.
class Adam {
 public:
  explicit Adam(AdamConfig config = {});

  /// One update of every entry of `params` that has a gradient in `grads`.
  /// Throws NumericError naming the first leaf with a non-finite gradient.
  void step(ParamSet& params, const ParamSet& grads);

  /// Per-parameter learning-rate multiplier (default 1).
  void set_lr_scale(const std::string& name, double scale);
  void set_lr(double lr) { config_.lr = lr; }

  const AdamConfig& config() const { return config_; }
  std::uint64_t steps() const { return steps_; }
  const ParamSet& first_moments() const { return m_; }
  const ParamSet& second_moments() const { return v_; }

 private:
  AdamConfig config_;
  std::uint64_t steps_ = 0;
  ParamSet m_;
  ParamSet v_;
  std::unordered_map<std::string, double> lr_scale_;
};

}  // namespace rtify::diff
