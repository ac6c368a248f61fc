#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rtify/diff/array.hpp"

namespace rtify::diff {

/// Named float arrays in insertion order. Used for trainable parameters,
/// their gradients, optimizer moments and checkpoint payloads.
class ParamSet {
 public:
  void set(const std::string& name, Array value);
  bool contains(const std::string& name) const;
  Array& at(const std::string& name);
  const Array& at(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Copies every entry of `other` under `prefix + name`.
  void merge(const ParamSet& other, const std::string& prefix = {});
  /// Entries whose name starts with `prefix`, with the prefix stripped.
  ParamSet subset(const std::string& prefix) const;

  /// FNV-1a over names, shapes and raw bytes; used to assert frozen weights.
  std::uint64_t checksum() const;

  bool operator==(const ParamSet&) const = default;

 private:
  std::vector<std::pair<std::string, Array>> entries_;
};

}  // namespace rtify::diff
