// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace evtrack::nn {

/// Counter-based generator: the i-th draw is splitmix64(seed + i * golden).
/// Integer output is identical on every platform; floating draws are derived
/// with exact arithmetic from the top 53 bits.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t next_u64();

  /// Uniform in [0, 1).
  double uniform();
  /// Uniform in (0, 1), safe as a log argument.
  double uniform_open();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Unbiased integer in [0, n). n must be > 0.
  std::uint64_t uniform_int(std::uint64_t n);
  /// Standard Gumbel: -log(-log(u)).
  double gumbel();
  /// Exponential with the given rate (> 0).
  double exponential(double rate);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace evtrack::nn
