#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace lane3d {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash64(std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(a) ^ (b + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t hash64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Seed for one stage of one scene. Streams never depend on processing order.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t scene_index,
                                 std::string_view stage) {
  return hash64(hash64(master, scene_index), hash64(stage));
}

using Rng = std::mt19937_64;

}  // namespace lane3d
