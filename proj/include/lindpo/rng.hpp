// Copyright 2026 The lindpo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <vector>

namespace lindpo {

inline constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Folds a path of integers (seed, purpose, step, index, ...) into one stream key.
inline constexpr std::uint64_t derive_key(std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t key = 0x6A09E667F3BCC908ULL;
  for (std::uint64_t p : path) key = splitmix64(key ^ splitmix64(p));
  return key;
}

/// Counter-based bit generator: output i of stream k is splitmix64(k, i).
/// Streams are cheap to create, so every (seed, step, chain) gets its own and
/// results never depend on evaluation order.
class CounterEngine {
 public:
  using result_type = std::uint64_t;

  explicit CounterEngine(std::uint64_t key) noexcept : key_(key) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept { return splitmix64(key_ + 0xD1B54A32D192ED03ULL * ++counter_); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

class Rng {
 public:
  explicit Rng(std::uint64_t key) : engine_(key) {}
  Rng(std::initializer_list<std::uint64_t> path) : engine_(derive_key(path)) {}

  double normal() { return normal_(engine_); }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  /// Uniform integer in [lo, hi].
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }
  std::vector<double> normal_vector(std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = normal();
    return v;
  }

 private:
  CounterEngine engine_;
  std::normal_distribution<double> normal_;
};

// Stream purposes. Distinct tags keep streams for different uses disjoint.
namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kBatch = 2;
inline constexpr std::uint64_t kNoise = 3;
inline constexpr std::uint64_t kSample = 4;
inline constexpr std::uint64_t kEval = 5;
inline constexpr std::uint64_t kData = 6;
inline constexpr std::uint64_t kVerify = 7;
}  // namespace stream

}  // namespace lindpo
