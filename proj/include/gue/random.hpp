#pragma once

// Seed derivation. Every random quantity flows from one user seed through
// named streams, so adding or reordering subsystems never perturbs the draws
// of another subsystem.

#include <cstdint>
#include <random>
#include <string_view>

namespace gue {

using Rng = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Child seed for stream `name`, element `index`, of a parent seed.
inline constexpr std::uint64_t derive_seed(std::uint64_t parent, std::string_view name,
                                           std::uint64_t index = 0) {
  return splitmix64(splitmix64(parent ^ fnv1a(name)) + splitmix64(index + 0x632BE59BD9B4E019ULL));
}

inline Rng make_rng(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  return Rng(seq);
}

inline Rng make_rng(std::uint64_t parent, std::string_view name, std::uint64_t index = 0) {
  return make_rng(derive_seed(parent, name, index));
}

}  // namespace gue
