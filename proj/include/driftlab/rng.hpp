#pragma once

#include <cstdint>
#include <string_view>

namespace driftlab {

/// xoshiro256** seeded through splitmix64.
///
/// Every random draw in the library goes through this generator so that runs
/// are reproducible across compilers and standard libraries: the integer and
/// floating-point transforms below are fixed, unlike the <random>
/// distributions whose algorithms are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();

  /// Uniform integer in [0, n). Unbiased (rejection on the multiply-high
  /// method). n = 0 returns 0.
  std::uint64_t uniform_int(std::uint64_t n);

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t s_[4];
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

std::uint64_t splitmix64(std::uint64_t& state);

/// Order-sensitive hash of two 64-bit values, used to derive independent
/// streams such as (stream seed, task index).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

/// FNV-1a of a tag, folded into a seed. Lets call sites name their streams
/// ("dropout", "shuffle", ...) instead of using magic constants.
std::uint64_t mix_seed(std::uint64_t a, std::string_view tag);

}  // namespace driftlab
