#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace msrgcn {

// Counter-based deterministic PRNG. Each generator is a (key, counter) pair;
// the i-th output is splitmix64_mix(key + i*GAMMA), so draws depend only on
// the key and the draw index, never on shared global state. Independent
// sub-streams are derived by hashing a seed with one or two stream tags,
// which keeps dataset generation reproducible and parallelizable per image.
class CounterRng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  static std::uint64_t derive_key(std::uint64_t seed, std::uint64_t tag_a,
                                  std::uint64_t tag_b = 0) {
    return mix(mix(seed + kGamma * (tag_a + 1)) + kGamma * (tag_b + 1));
  }

  explicit CounterRng(std::uint64_t key) : key_(key) {}
  CounterRng(std::uint64_t seed, std::uint64_t tag_a, std::uint64_t tag_b = 0)
      : key_(derive_key(seed, tag_a, tag_b)) {}

  std::uint64_t next_u64() { return mix(key_ + kGamma * ++counter_); }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in (0, 1]; safe as a log() argument.
  double next_double_open() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Unbiased uniform integer in [0, bound) via rejection.
  std::uint64_t next_below(std::uint64_t bound) {
    if (bound == 0) throw std::invalid_argument("next_below: bound must be > 0");
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

  // Uniform integer in [lo, hi] inclusive.
  std::int64_t next_int(std::int64_t lo, std::int64_t hi) {
    if (lo > hi) throw std::invalid_argument("next_int: empty range");
    return lo + static_cast<std::int64_t>(
                    next_below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  // Standard normal via Box-Muller. Draws two uniforms per call.
  double next_gaussian() {
    const double u1 = next_double_open();
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// Stream tags used across the project. Fixed constants so that file formats
// and reports stay stable under code reorganization.
namespace stream {
inline constexpr std::uint64_t kBasis = 1;      // generator rotation bases
inline constexpr std::uint64_t kImage = 2;      // per-image content, tag_b = image index
inline constexpr std::uint64_t kFolds = 3;      // patient shuffling for k-fold
inline constexpr std::uint64_t kInit = 4;       // weight init, tag_b = fold index
inline constexpr std::uint64_t kEpoch = 5;      // epoch shuffles, tag_b = epoch
inline constexpr std::uint64_t kTest = 900;     // unit-test local streams
}  // namespace stream

}  // namespace msrgcn
