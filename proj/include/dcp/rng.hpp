#pragma once

// Seeded random streams. Everything here is defined bit-for-bit (no
// implementation-defined std distributions), so a seed reproduces the same
// stream on every platform.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <span>
#include <utility>

namespace dcp {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Stream tags used when deriving child seeds. Values are part of the
/// on-disk reproducibility contract; do not renumber.
enum class Stream : std::uint64_t {
  run = 1,
  split = 2,
  net_init = 3,
  net_train = 4,
  retry = 5,
  passes_calibration = 6,
  passes_test = 7,
  pass = 8,
  tree = 9,
  fold = 10,
  forest_final = 11,
  folds_partition = 12,
  synthetic = 13,
  dropout_level = 14,
};

/// Derives a child seed from a parent seed, a stream tag and counters:
///   h = splitmix64(parent ^ splitmix64(tag)); h = splitmix64(h + c) per counter.
inline constexpr std::uint64_t derive_seed(std::uint64_t parent, Stream tag,
                                           std::initializer_list<std::uint64_t> counters = {}) {
  std::uint64_t h = splitmix64(parent ^ splitmix64(static_cast<std::uint64_t>(tag)));
  for (auto c : counters) h = splitmix64(h + c);
  return h;
}

/// xoshiro256** seeded through splitmix64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) {
      x += 0x9e3779b97f4a7c15ULL;
      std::uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      s = z ^ (z >> 31);
    }
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, bound) by rejection.
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return r % bound;
  }

  /// Standard normal via Box-Muller (one draw per call, spare discarded).
  double normal() {
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t state_[4];
};

}  // namespace dcp
