#include "vocab_expand/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace vexp {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(master) ^ a) ^ b);
}

double uniform_double(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::int64_t uniform_int(Rng& rng, std::int64_t n) {
  if (n < 1) throw std::invalid_argument("uniform_int: n must be >= 1");
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return static_cast<std::int64_t>(x % un);
}

double normal_double(Rng& rng) {
  double u1;
  do {
    u1 = uniform_double(rng);
  } while (u1 <= 0.0);
  const double u2 = uniform_double(rng);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

CategoricalSampler::CategoricalSampler(const std::vector<double>& probs) {
  if (probs.empty()) {
    throw std::invalid_argument("CategoricalSampler: empty distribution");
  }
  cdf_.resize(probs.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    cdf_[i] = acc;
  }
  cdf_.back() = 1.0;
}

std::int32_t CategoricalSampler::draw(Rng& rng) const {
  const double u = uniform_double(rng);
  std::size_t lo = 0;
  std::size_t hi = cdf_.size() - 1;
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (u < cdf_[mid]) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  return static_cast<std::int32_t>(lo);
}

}  // namespace vexp
