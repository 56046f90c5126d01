// Copyright 2026 The Tripletformer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace tripletformer {

/// One step of the splitmix64 sequence; advances `state` and returns the mixed output.
std::uint64_t splitmix64(std::uint64_t& state);

/// Deterministic pseudo-random stream: xoshiro256** seeded by four splitmix64 outputs.
///
/// Every draw helper below is defined in terms of next_u64() and is reproducible
/// bit-for-bit on any platform:
///   uniform()        = (next_u64() >> 11) * 2^-53             in [0, 1)
///   uniform_index(n) = rejection-sampled (next_u64() % n)      unbiased
///   normal()         = Box-Muller on two uniform() draws, cosine branch only
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  double uniform();
  double uniform(double lo, double hi);
  std::size_t uniform_index(std::size_t n);
  double normal();
  double normal(double mean, double sd);

  /// Fisher-Yates shuffle of `items`, driven by uniform_index.
  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::array<std::uint64_t, 4> s_{};
};

/// Child seed for a named sub-stream, e.g. derive_seed(global_seed, record_id).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view key);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key);

}  // namespace tripletformer
