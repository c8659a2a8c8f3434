#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace medk2n {

// 64-bit mix (splitmix64 finalizer). Used to derive independent stream
// seeds from (seed, epoch, batch, rank) tuples and from parameter names,
// so results do not depend on construction order.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return mix64(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

inline std::uint64_t hash_str(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::mt19937_64 make_engine(std::uint64_t seed) {
  return std::mt19937_64(mix64(seed));
}

inline std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t a,
                                   std::uint64_t b = 0, std::uint64_t c = 0) {
  return make_engine(hash_combine(hash_combine(hash_combine(seed, a), b), c));
}

}  // namespace medk2n
