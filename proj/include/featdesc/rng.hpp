#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "featdesc/hash.hpp"

namespace featdesc {

/// Deterministic RNG wrapper. std::mt19937_64 has a pinned algorithm, but the
/// standard distributions do not, so the transforms live here.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next() { return gen_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be positive.
  uint64_t below(uint64_t n) {
    // Rejection sampling keeps the draw unbiased.
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller.
  double gaussian() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (size_t i = items.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

/// Stable seed derivation from a context label plus integer parts, so
/// independent sub-tasks of one run never share a stream.
inline uint64_t derive_seed(uint64_t root, std::string_view label,
                            uint64_t a = 0, uint64_t b = 0, uint64_t c = 0) {
  uint64_t h = fnv1a64(label);
  h = fnv1a64_mix(h, root);
  h = fnv1a64_mix(h, a);
  h = fnv1a64_mix(h, b);
  h = fnv1a64_mix(h, c);
  return h;
}

}  // namespace featdesc
