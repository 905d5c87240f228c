#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace synthgen {

std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t splitmix64(std::uint64_t x);

/// Mixes a base seed with a textual stream key. Used to give each
/// (label, round) its own independent, reproducible stream.
std::uint64_t derive_seed(std::uint64_t base, std::string_view key);

/// Seeded generator with platform-stable draws. The std distributions are
/// implementation-defined, so conversions are done by hand on top of the
/// (standardized) mt19937_64 output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  /// Uniform in [0, n). n must be positive.
  std::uint64_t index(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace synthgen
