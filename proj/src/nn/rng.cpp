// SPDX-License-Identifier: Apache-2.0
#include "evtrack/nn/rng.hpp"

#include <cmath>

#include "evtrack/error.hpp"

namespace evtrack::nn {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t Rng::next_u64() {
  ++counter_;
  return mix(seed_ + counter_ * kGolden);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform_open() {
  // (k + 0.5) / 2^53 for k in [0, 2^53) never hits 0 or 1.
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n == 0) throw InvalidArgument("uniform_int: n must be positive");
  const std::uint64_t limit = -n % n;  // 2^64 mod n
  for (;;) {
    const std::uint64_t r = next_u64();
    if (r >= limit) return r % n;
  }
}

double Rng::gumbel() { return -std::log(-std::log(uniform_open())); }

double Rng::exponential(double rate) {
  if (!(rate > 0.0)) throw InvalidArgument("exponential: rate must be positive");
  return -std::log(uniform_open()) / rate;
}

}  // namespace evtrack::nn
