#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace rtify {

/// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic child seed for a (master, path...) tuple.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix64(master);
  for (auto p : path) s = mix64(s ^ mix64(p + 0x632be59bd9b4e019ULL));
  return s;
}

using Rng = std::mt19937_64;

// Stream tags for derive_seed, one per consumer of randomness.
enum class Stream : std::uint64_t {
  kStimulusTrial = 1,
  kStimulusLabel = 2,
  kBackboneInit = 3,
  kBackboneShuffle = 4,
  kRtifyInit = 5,
  kDdmTrial = 6,
  kWwNoise = 7,
  kWwInit = 8,
  kReferenceTrain = 9,
  kReferenceEval = 10,
};

inline std::uint64_t tag(Stream s) { return static_cast<std::uint64_t>(s); }

}  // namespace rtify
