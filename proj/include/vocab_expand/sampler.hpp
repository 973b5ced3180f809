#pragma once

/**
 * Training-data generation and empirical statistics.  A dataset is a set of
 * N token sequences over the expanded vocabulary [0, T+m); every sequence
 * contains at least one non-final new-token position, and the token right
 * after a new token always lies in the original vocabulary.
 *
 * Default sequence shape:
 *   [prefix walk of prefix_len tokens inside V, started uniformly over V]
 *   [occurrences_per_sequence blocks of (u, successor): u uniform over U,
 *    successor drawn from the expanded row of u]
 *   [suffix walk of suffix_len tokens inside V, continuing from the last
 *    successor]
 * With allow_v_to_u set, prefix/suffix steps may jump to a uniform new
 * token with probability v_to_u_leak (each leaked new token is immediately
 * followed by a draw from its row, so the after-a-new-token invariant still
 * holds).  This mode exists only for robustness experiments.
 */

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "vocab_expand/chain.hpp"

namespace vexp {

struct SamplingSpec {
  std::int32_t prefix_len = 0;
  std::int32_t suffix_len = 0;
  std::int32_t occurrences_per_sequence = 1;
  bool allow_v_to_u = false;
  double v_to_u_leak = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Token sequences in compressed form (flat token array + offsets).
// Construction validates the dataset invariants above.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<std::vector<TokenId>> sequences, std::int32_t T,
          std::int32_t m, std::uint64_t seed);

  std::int64_t size() const { return static_cast<std::int64_t>(offsets_.size()) - 1; }
  std::int64_t length(std::int64_t i) const {
    return offsets_[static_cast<std::size_t>(i) + 1] - offsets_[static_cast<std::size_t>(i)];
  }
  TokenId token(std::int64_t i, std::int64_t j) const {
    return tokens_[static_cast<std::size_t>(offsets_[static_cast<std::size_t>(i)] + j)];
  }
  std::vector<TokenId> sequence(std::int64_t i) const;

  std::int32_t vocab() const { return T_; }
  std::int32_t new_count() const { return m_; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::vector<TokenId> tokens_;
  std::vector<std::int64_t> offsets_ = {0};
  std::int32_t T_ = 0;
  std::int32_t m_ = 0;
  std::uint64_t seed_ = 0;
};

// Per-new-token empirical estimate.  `count` is the number of non-final
// occurrences of the token (each contributes one observed successor);
// tokens never observed carry has_estimate = false and an empty q_hat.
struct TokenEstimate {
  std::int64_t count = 0;
  bool has_estimate = false;
  ProbVector q_hat;
};

struct EmpiricalDistribution {
  std::vector<TokenEstimate> per_token;  // size m
  std::int64_t n_min = 0;                // min over new tokens of count
};

// Draws N sequences as described above.  Deterministic given the rng state.
Dataset generate_dataset(const TransitionMatrix& P_expanded,
                         const SamplingSpec& spec, std::int64_t N, Rng& rng);

// Convenience overload seeding its own stream from spec.seed.
Dataset generate_dataset(const TransitionMatrix& P_expanded,
                         const SamplingSpec& spec, std::int64_t N);

// Successor counts and normalized estimates for every new token.
EmpiricalDistribution empirical_distributions(const Dataset& D);

struct MinCountReport {
  double empirical_probability = 0.0;  // fraction of replications passing
  double analytic_bound = 0.0;         // 1 - m exp(-eps^2 N / (2 m))
  double threshold = 0.0;              // (1 - eps) N / m
  std::int32_t replications = 0;
};

// Monte-Carlo check of the minimum-count concentration bound: fraction of
// replications with N_min >= (1 - eps) N / m, where N counts the scheduled
// new-token occurrences (sequences x occurrences_per_sequence; leaked
// occurrences are extra and only help).  Replication r uses an RNG stream
// derived from (spec.seed, r), so the result is independent of scheduling.
MinCountReport min_count_trial(const TransitionMatrix& P_expanded,
                               const SamplingSpec& spec, std::int64_t N,
                               double epsilon, std::int32_t replications);

// Plain-text serialization: header "N=<int> T=<int> m=<int> seed=<int>",
// then one sequence per line, space-separated token indices.
void write_dataset(std::ostream& os, const Dataset& D);
Dataset read_dataset(std::istream& is);

}  // namespace vexp
