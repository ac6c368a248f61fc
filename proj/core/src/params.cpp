#include "rtify/diff/params.hpp"

#include <algorithm>
#include <cstring>

#include "rtify/hash.hpp"

namespace rtify::diff {

void ParamSet::set(const std::string& name, Array value) {
  for (auto& [n, v] : entries_) {
    if (n == name) {
      v = std::move(value);
      return;
    }
  }
  entries_.emplace_back(name, std::move(value));
}

bool ParamSet::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

Array& ParamSet::at(const std::string& name) {
  for (auto& [n, v] : entries_)
    if (n == name) return v;
  throw ConfigError("parameter '" + name + "' not found");
}

const Array& ParamSet::at(const std::string& name) const {
  for (const auto& [n, v] : entries_)
    if (n == name) return v;
  throw ConfigError("parameter '" + name + "' not found");
}

void ParamSet::merge(const ParamSet& other, const std::string& prefix) {
  for (const auto& [n, v] : other) set(prefix + n, v);
}

ParamSet ParamSet::subset(const std::string& prefix) const {
  ParamSet out;
  for (const auto& [n, v] : entries_) {
    if (n.rfind(prefix, 0) == 0) out.set(n.substr(prefix.size()), v);
  }
  return out;
}

std::uint64_t ParamSet::checksum() const {
  Fnv1a h;
  for (const auto& [n, v] : entries_) {
    h.update(n);
    for (auto d : v.shape()) h.update(std::to_string(d));
    h.update(std::string_view(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float)));
  }
  return h.digest();
}

}  // namespace rtify::diff
