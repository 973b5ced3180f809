#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace vexp {

// All randomness flows through std::mt19937_64, which the standard pins
// bit-for-bit, plus the hand-rolled draw helpers below.  Standard-library
// distributions are implementation-defined and would break cross-platform
// reproducibility, so they are not used anywhere.
using Rng = std::mt19937_64;

// SplitMix64 finalizer.
std::uint64_t splitmix64(std::uint64_t x);

// Derives an independent stream seed from (master, a, b) by chaining the
// SplitMix64 finalizer: mix(mix(mix(master) ^ a) ^ b).
std::uint64_t mix_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b);

// Uniform double in [0, 1) with 53 random bits.
double uniform_double(Rng& rng);

// Unbiased uniform integer in [0, n), n >= 1, via rejection sampling.
std::int64_t uniform_int(Rng& rng, std::int64_t n);

// Standard normal via Box-Muller on uniform_double draws.
double normal_double(Rng& rng);

// Draws from a fixed categorical distribution by binary search on the
// cumulative table.
class CategoricalSampler {
 public:
  explicit CategoricalSampler(const std::vector<double>& probs);

  std::int32_t draw(Rng& rng) const;

 private:
  std::vector<double> cdf_;
};

}  // namespace vexp
