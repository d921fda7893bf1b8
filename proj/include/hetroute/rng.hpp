#pragma once

#include <cstdint>
#include <random>

namespace hetroute {

/// Deterministic uniform stream around std::mt19937_64. Every uniform()
/// consumes exactly one engine draw, so stream positions are reproducible
/// across platforms and independent of library distributions.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform double in [0, 1), 53 bits of randomness.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in {0, ..., n-1}; consumes one draw. The scaling bias
  /// is below 2^-50 for the small n used here.
  std::uint64_t below(std::uint64_t n) {
    auto v = static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
    return v < n ? v : n - 1;
  }

  std::mt19937_64& engine() { return engine_; }

private:
  std::mt19937_64 engine_;
};

}  // namespace hetroute
