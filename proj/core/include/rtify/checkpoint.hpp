#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "rtify/diff/params.hpp"

namespace rtify {

/// Container for trained parameters.
///
/// On disk: the magic line `RTIFY-CHECKPOINT 1`, one line of compact UTF-8
/// JSON (format version, module name, seed, config hash, tool version,
/// training metadata, array names and shapes), then each array's elements as
/// little-endian float32 in header order.
struct Checkpoint {
  std::string module;
  std::uint64_t seed = 0;
  std::string config_hash;
  nlohmann::json meta = nlohmann::json::object();
  diff::ParamSet params;

  /// Writes to a temporary sibling and renames, so an interrupted save never
  /// clobbers the previous file.
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

inline constexpr int kCheckpointVersion = 1;

}  // namespace rtify
