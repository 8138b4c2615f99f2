#pragma once

#include <cstdint>
#include <random>

namespace gmerf {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Counter-based seed stream: the seed for (stream, index) depends only on
/// the master seed and the two counters, never on how many draws happened
/// before. Used for per-tree, per-replicate and per-fold generators.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                    std::uint64_t index = 0) {
  return splitmix64(splitmix64(master ^ splitmix64(stream + 0x632BE59BD9B4E019ULL)) + index);
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace gmerf
