#pragma once

#include <cstdint>
#include <random>

namespace nbe {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent streams from one seed.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for stream `id` under master seed `seed`: hash(seed, id).
constexpr std::uint64_t split_seed(std::uint64_t seed, std::uint64_t id) {
  return mix64(mix64(seed) ^ mix64(id + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t id) {
  return Rng(split_seed(seed, id));
}

inline double uniform01(Rng& rng) {
  // 53-bit mantissa in [0, 1).
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Open interval (0, 1); safe for log().
inline double uniform_open01(Rng& rng) {
  return (static_cast<double>(rng() >> 12) + 0.5) * 0x1.0p-52;
}

}  // namespace nbe
