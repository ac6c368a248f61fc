#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rtify/stimuli.hpp"

namespace rtify::stimuli {

struct Trial {
  int label = 0;
  int condition = 0;
  double coherence = 0.0;
  EvidenceStream stream;
};

struct Split {
  std::string name;
  std::vector<Trial> trials;
};

/// What to generate. One condition per coherence; every condition of a split
/// reuses the same per-trial seeds and the same counterbalanced label
/// sequence, so conditions differ only in coherence.
struct DatasetSpec {
  std::vector<double> coherences{kCanonicalCoherences.begin(), kCanonicalCoherences.end()};
  std::vector<double> directions_deg{0.0, 180.0};
  RdmConfig base;
  int train_per_condition = 100;
  int test_per_condition = 0;
  int warmup_trials = 0;
  double warmup_coherence = 0.999;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Dataset {
  DatasetSpec spec;
  std::string config_hash;
  std::vector<Split> splits;

  const Split& split(const std::string& name) const;
  bool has_split(const std::string& name) const;
  int n_classes() const { return static_cast<int>(spec.directions_deg.size()); }
  int n_conditions() const { return static_cast<int>(spec.coherences.size()); }
  std::size_t n_records() const;
  nlohmann::json manifest() const;
};

/// Generates every split; trials are independent and are spread over `workers` threads.
Dataset make_dataset(const DatasetSpec& spec, int workers = 1);

/// Writes `manifest.json` plus one `<split>.f32` file per split. Each record is
/// [label, coherence, condition, stream (n_frames x 8)] as little-endian float32.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Label sequence for `n` trials: an equal share of every class, shuffled.
std::vector<int> counterbalanced_labels(int n, int n_classes, std::uint64_t seed);

}  // namespace rtify::stimuli
