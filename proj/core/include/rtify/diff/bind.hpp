#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rtify/diff/params.hpp"
#include "rtify/diff/tape.hpp"

namespace rtify::diff {

/// Parameters registered as trainable leaves (or constants) of one tape.
template <class T>
class Bound {
 public:
  Bound() = default;
  Bound(Tape<T>& tape, const ParamSet& params, bool trainable = true) {
    for (const auto& [name, value] : params) {
      auto converted = value.template cast<T>();
      vars_.emplace_back(name, trainable ? tape.parameter(std::move(converted), name)
                                         : tape.constant(std::move(converted)));
    }
  }

  /// Leaves with explicit values, e.g. double-precision points for gradient checks.
  Bound(Tape<T>& tape, const std::vector<std::pair<std::string, BasicArray<T>>>& values) {
    for (const auto& [name, value] : values) vars_.emplace_back(name, tape.parameter(value, name));
  }

  const Var<T>& operator[](const std::string& name) const {
    for (const auto& [n, v] : vars_)
      if (n == name) return v;
    throw ConfigError("bound parameter '" + name + "' not found");
  }

  bool contains(const std::string& name) const {
    for (const auto& [n, v] : vars_)
      if (n == name) return true;
    return false;
  }

  /// Gradients of every bound leaf, converted back to float.
  ParamSet gradients(const Gradients<T>& grads) const {
    ParamSet out;
    for (const auto& [n, v] : vars_) {
      if (grads.contains(v)) out.set(n, grads[v].template cast<float>());
    }
    return out;
  }

  const std::vector<std::pair<std::string, Var<T>>>& vars() const { return vars_; }

 private:
  std::vector<std::pair<std::string, Var<T>>> vars_;
};

}  // namespace rtify::diff
