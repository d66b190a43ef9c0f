#pragma once

#include <cstdint>
#include <random>

namespace peft {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Independent stream keyed by (seed, a, b); used for per-epoch, per-patch
// randomness so results do not depend on processing order.
inline Rng keyed_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return Rng(splitmix64(splitmix64(splitmix64(seed) ^ a) ^ (b * 0xD1B54A32D192ED03ULL)));
}

// Stream tags so different consumers of the global seed never overlap.
enum class RngStream : std::uint64_t {
  ModelInit = 1,
  AdapterInit = 2,
  Shuffle = 3,
  Augment = 4,
  Dropout = 5,
  Split = 6,
};

inline Rng stream_rng(std::uint64_t seed, RngStream stream, std::uint64_t a = 0, std::uint64_t b = 0) {
  return keyed_rng(seed ^ (static_cast<std::uint64_t>(stream) << 56), a, b);
}

}  // namespace peft
