#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace featdesc {

// 64-bit FNV-1a. Used for cache keys, seed derivation and file fingerprints.
// Cache lookups verify the full request on hit, so collisions are harmless.
constexpr uint64_t kFnvOffset = 1469598103934665603ull;
constexpr uint64_t kFnvPrime = 1099511628211ull;

inline uint64_t fnv1a64(std::string_view data, uint64_t seed = kFnvOffset) {
  uint64_t h = seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline uint64_t fnv1a64_mix(uint64_t h, uint64_t value) {
  for (int i = 0; i < 8; ++i) {
    h ^= (value >> (8 * i)) & 0xff;
    h *= kFnvPrime;
  }
  return h;
}

std::string hex64(uint64_t value);

}  // namespace featdesc
