#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <doctest.h>

#include "vocab_expand/sampler.hpp"
#include "vocab_expand/synth_model.hpp"

using namespace vexp;

namespace {

// Expanded 2+1 chain with a hand-picked new-token row.
TransitionMatrix tiny_expanded() {
  const TransitionMatrix base(
      {ProbVector({0.5, 0.5}), ProbVector({0.2, 0.8})}, 2);
  return expand_state_space(base, {ProbVector({0.3, 0.7})});
}

SyntheticChain medium_chain(std::int32_t T, std::int32_t m, std::uint64_t seed) {
  ChainSpec spec;
  spec.T = T;
  spec.d = 6;
  spec.m = m;
  spec.cluster_count = std::min<std::int32_t>(5, T);
  spec.seed = seed;
  return build_chain(spec);
}

}  // namespace

TEST_CASE("dataset construction enforces the sequence contract") {
  // Valid: new token 2 at a non-final position, successor in V.
  CHECK_NOTHROW(Dataset({{1, 2, 0}, {2, 1, 0}}, 2, 1, 0));

  // No new-token occurrence at a non-final position.
  CHECK_THROWS_AS(Dataset({{0, 1, 0}}, 2, 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(Dataset({{0, 1, 2}}, 2, 1, 0), std::invalid_argument);

  // New token followed by a new token.
  CHECK_THROWS_AS(Dataset({{2, 2, 0}}, 2, 1, 0), std::invalid_argument);

  // Token out of range.
  CHECK_THROWS_AS(Dataset({{1, 3, 0}}, 2, 1, 0), std::invalid_argument);
}

TEST_CASE("empirical distributions count successors by hand") {
  const Dataset D({{1, 2, 0}, {2, 1, 0}, {0, 2, 1}}, 2, 1, 0);
  const EmpiricalDistribution stats = empirical_distributions(D);
  REQUIRE(stats.per_token.size() == 1);
  const TokenEstimate& est = stats.per_token[0];
  CHECK(est.count == 3);
  CHECK(est.has_estimate);
  // Successors observed: 0, 1, 1 -> q_hat = (1/3, 2/3).
  CHECK(est.q_hat[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(est.q_hat[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(stats.n_min == 3);
}

TEST_CASE("generated sequences satisfy the shape contract") {
  const TransitionMatrix P = tiny_expanded();
  SamplingSpec spec;
  spec.prefix_len = 3;
  spec.suffix_len = 2;
  spec.occurrences_per_sequence = 2;
  Rng rng(5);
  const Dataset D = generate_dataset(P, spec, 200, rng);
  CHECK(D.size() == 200);
  for (std::int64_t i = 0; i < D.size(); ++i) {
    // prefix + 2 x (u, successor) + suffix
    CHECK(D.length(i) == 3 + 4 + 2);
    std::int32_t new_positions = 0;
    for (std::int64_t j = 0; j < D.length(i); ++j) {
      const TokenId t = D.token(i, j);
      CHECK(t >= 0);
      CHECK(t < 3);
      if (t == 2 && j + 1 < D.length(i)) {
        ++new_positions;
        CHECK(D.token(i, j + 1) < 2);  // successor stays in V
      }
    }
    CHECK(new_positions >= 2);
  }

  // Count identity: numerator counts sum to the number of non-final
  // occurrences of each new token.
  const EmpiricalDistribution stats = empirical_distributions(D);
  std::int64_t occurrences = 0;
  for (std::int64_t i = 0; i < D.size(); ++i)
    for (std::int64_t j = 0; j + 1 < D.length(i); ++j)
      if (D.token(i, j) == 2) ++occurrences;
  CHECK(stats.per_token[0].count == occurrences);
  CHECK(occurrences == 400);
}

TEST_CASE("leaked transitions keep the successor invariant") {
  const TransitionMatrix P = tiny_expanded();
  SamplingSpec spec;
  spec.prefix_len = 6;
  spec.suffix_len = 6;
  spec.allow_v_to_u = true;
  spec.v_to_u_leak = 0.35;
  Rng rng(8);
  const Dataset D = generate_dataset(P, spec, 500, rng);
  std::int64_t leaked = 0;
  for (std::int64_t i = 0; i < D.size(); ++i) {
    std::int64_t new_count = 0;
    for (std::int64_t j = 0; j < D.length(i); ++j)
      if (D.token(i, j) == 2) ++new_count;
    leaked += new_count - 1;  // one scheduled occurrence per sequence
  }
  CHECK(leaked > 0);  // the leak actually fires at 35%
}

TEST_CASE("successor law matches the source row (chi-square, alpha = 0.01)") {
  const SyntheticChain chain = medium_chain(10, 1, 21);
  SamplingSpec spec;
  Rng rng(9);
  const std::int64_t N = 10000;  // one occurrence per sequence
  const Dataset D = generate_dataset(chain.matrix, spec, N, rng);
  const EmpiricalDistribution stats = empirical_distributions(D);
  REQUIRE(stats.per_token[0].count == N);

  // Chi-square 0.99 quantiles for 1..9 degrees of freedom.
  const double quantile[] = {6.6348966010212145, 9.21034037197618,
                             11.344866730144373, 13.276704135987622,
                             15.08627246938899,  16.811893829770927,
                             18.475306906582357, 20.090235029663233,
                             21.665994333461924};
  const ProbVector& q = chain.matrix.row(10);
  double statistic = 0.0;
  std::int32_t dof = -1;
  for (std::int32_t k = 0; k < q.size(); ++k) {
    if (q[k] == 0.0) continue;
    ++dof;
    const double expected = static_cast<double>(N) * q[k];
    const double observed =
        stats.per_token[0].q_hat[k] * static_cast<double>(N);
    statistic += (observed - expected) * (observed - expected) / expected;
  }
  REQUIRE(dof >= 1);
  REQUIRE(dof <= 9);
  CHECK(statistic <= quantile[dof - 1]);
}

TEST_CASE("minimum-count concentration dominates the analytic bound") {
  const SyntheticChain chain = medium_chain(12, 5, 33);
  SamplingSpec spec;
  spec.seed = 4;
  const std::int64_t N = 200;
  const double eps = 0.5;
  const MinCountReport report =
      min_count_trial(chain.matrix, spec, N, eps, 1000);

  CHECK(report.threshold == doctest::Approx(20.0).epsilon(1e-15));
  CHECK(report.analytic_bound ==
        doctest::Approx(0.9663102650045726).epsilon(1e-15));
  CHECK(report.replications == 1000);

  // One-sided dominance up to Monte-Carlo noise (3 sigma of the bound).
  const double p = report.analytic_bound;
  const double sigma = std::sqrt(p * (1.0 - p) / 1000.0);
  CHECK(report.empirical_probability >= p - 3.0 * sigma);
}

TEST_CASE("dataset generation is deterministic and seed-sensitive") {
  const TransitionMatrix P = tiny_expanded();
  SamplingSpec spec;
  spec.prefix_len = 2;
  spec.seed = 42;
  const Dataset a = generate_dataset(P, spec, 50);
  const Dataset b = generate_dataset(P, spec, 50);
  REQUIRE(a.size() == b.size());
  for (std::int64_t i = 0; i < a.size(); ++i)
    CHECK(a.sequence(i) == b.sequence(i));

  spec.seed = 43;
  const Dataset c = generate_dataset(P, spec, 50);
  bool any_different = false;
  for (std::int64_t i = 0; i < a.size(); ++i)
    if (a.sequence(i) != c.sequence(i)) any_different = true;
  CHECK(any_different);
}

TEST_CASE("dataset text round-trip is exact") {
  const TransitionMatrix P = tiny_expanded();
  SamplingSpec spec;
  spec.prefix_len = 1;
  spec.suffix_len = 1;
  spec.seed = 77;
  const Dataset D = generate_dataset(P, spec, 25);

  std::stringstream buffer;
  write_dataset(buffer, D);
  const Dataset E = read_dataset(buffer);
  REQUIRE(E.size() == D.size());
  CHECK(E.vocab() == D.vocab());
  CHECK(E.new_count() == D.new_count());
  CHECK(E.seed() == D.seed());
  for (std::int64_t i = 0; i < D.size(); ++i)
    CHECK(E.sequence(i) == D.sequence(i));
}

TEST_CASE("sampling spec validation") {
  SamplingSpec spec;
  CHECK_NOTHROW(spec.validate());
  spec.occurrences_per_sequence = 0;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.occurrences_per_sequence = 1;
  spec.prefix_len = -1;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.prefix_len = 0;
  spec.v_to_u_leak = 0.5;  // leak probability without the flag
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.allow_v_to_u = true;
  CHECK_NOTHROW(spec.validate());
  spec.v_to_u_leak = 1.5;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}
