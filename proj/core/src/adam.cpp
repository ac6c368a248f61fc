#include "rtify/diff/adam.hpp"

#include <cmath>

namespace rtify::diff {

Adam::Adam(AdamConfig config) : config_(config) {
  if (!(config_.lr >= 0.0)) throw ConfigError("adam: learning rate must be non-negative");
  if (!(config_.beta1 >= 0.0 && config_.beta1 < 1.0 && config_.beta2 >= 0.0 && config_.beta2 < 1.0)) {
    throw ConfigError("adam: betas must lie in [0,1)");
  }
}

void Adam::set_lr_scale(const std::string& name, double scale) { lr_scale_[name] = scale; }

void Adam::step(ParamSet& params, const ParamSet& grads) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) continue;
    if (g.shape() != params.at(name).shape()) {
      throw ShapeError("adam: gradient for '" + name + "' has shape " + shape_string(g.shape()) +
                       ", parameter has " + shape_string(params.at(name).shape()));
    }
    if (!g.all_finite()) throw NumericError("adam: non-finite gradient for '" + name + "'");
    for (float x : g.values()) sq += static_cast<double>(x) * x;
  }
  double clip = 1.0;
  if (config_.clip_norm > 0.0) {
    const double norm = std::sqrt(sq);
    if (norm > config_.clip_norm) clip = config_.clip_norm / norm;
  }

  ++steps_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) continue;
    auto& p = params.at(name);
    if (!m_.contains(name)) {
      m_.set(name, Array(p.shape()));
      v_.set(name, Array(p.shape()));
    }
    auto& m = m_.at(name);
    auto& v = v_.at(name);
    auto it = lr_scale_.find(name);
    const double lr = config_.lr * (it == lr_scale_.end() ? 1.0 : it->second);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]) * clip;
      const double mi = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
      const double vi = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + config_.eps);
      p[i] = static_cast<float>(p[i] - update);
    }
  }
}

}  // namespace rtify::diff
