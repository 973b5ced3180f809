#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <doctest.h>

#include "vocab_expand/synth_model.hpp"

using namespace vexp;

namespace {

EmbeddingMatrix random_embedding(std::int32_t T, std::int32_t d, Rng& rng) {
  Eigen::MatrixXd entries(T, d);
  for (std::int32_t t = 0; t < T; ++t)
    for (std::int32_t k = 0; k < d; ++k) entries(t, k) = normal_double(rng);
  return EmbeddingMatrix(entries);
}

// Independent largest-singular-value oracle: power iteration on E^T E.
double power_iteration_sigma(const Eigen::MatrixXd& E) {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(E.cols());
  v.normalize();
  for (int it = 0; it < 2000; ++it) {
    Eigen::VectorXd next = E.transpose() * (E * v);
    next.normalize();
    v = next;
  }
  return std::sqrt(v.dot(E.transpose() * (E * v)));
}

}  // namespace

TEST_CASE("flooring truncates and renormalizes to a fixed point") {
  // softmax(2, 1, 0, -3), then floor at c = 0.05.
  const std::vector<double> sm = {0.6622724135241204, 0.24363640539051576,
                                  0.08962882466408191, 0.004462356421281936};
  const std::vector<double> floored = floor_distribution(sm, 0.05);
  CHECK(floored[0] == doctest::Approx(0.6652409557748219).epsilon(1e-15));
  CHECK(floored[1] == doctest::Approx(0.24472847105479764).epsilon(1e-15));
  CHECK(floored[2] == doctest::Approx(0.09003057317038045).epsilon(1e-15));
  CHECK(floored[3] == 0.0);

  // Renormalization can push a surviving entry above c only, never below,
  // so every nonzero output respects the floor.
  for (double v : floored) CHECK((v == 0.0 || v >= 0.05));

  // Everything below the floor: nothing survives.
  CHECK_THROWS_AS(floor_distribution({0.25, 0.25, 0.25, 0.25}, 0.3),
                  std::domain_error);
}

TEST_CASE("link outputs are floored probability vectors") {
  Rng rng(17);
  const EmbeddingMatrix E = random_embedding(12, 5, rng);
  const LinkFunction f{1.0, 0.02};
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd e(5);
    for (int k = 0; k < 5; ++k) e[k] = 2.0 * normal_double(rng);
    const ProbVector p = link_from_embedding(f, E, e);
    double total = 0.0;
    for (std::int32_t i = 0; i < p.size(); ++i) {
      CHECK((p[i] == 0.0 || p[i] >= f.floor_c));
      total += p[i];
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);
    CHECK_FALSE(p.support().empty());
  }
}

TEST_CASE("softmax matches direct evaluation") {
  Rng rng(19);
  const EmbeddingMatrix E = random_embedding(6, 3, rng);
  const LinkFunction f{0.7, 1e-3};
  Eigen::VectorXd e(3);
  e << 0.3, -1.1, 0.45;
  const std::vector<double> got = raw_softmax(f, E, e);
  const Eigen::VectorXd logits = E.entries() * e / f.temperature;
  double total = 0.0;
  for (std::int32_t i = 0; i < 6; ++i) total += std::exp(logits[i]);
  for (std::int32_t i = 0; i < 6; ++i)
    CHECK(got[static_cast<std::size_t>(i)] ==
          doctest::Approx(std::exp(logits[i]) / total).epsilon(1e-12));
}

TEST_CASE("cached top singular value matches power iteration") {
  Rng rng(23);
  for (int trial = 0; trial < 5; ++trial) {
    const EmbeddingMatrix E = random_embedding(10, 4, rng);
    CHECK(std::abs(E.max_singular_value() -
                   power_iteration_sigma(E.entries())) <= 1e-8);
  }
}

TEST_CASE("generated chains satisfy every structural contract") {
  ChainSpec spec;
  spec.T = 20;
  spec.d = 8;
  spec.m = 4;
  spec.s = 2;
  spec.cluster_count = 4;
  spec.min_gamma = 0.05;
  spec.seed = 3;
  const SyntheticChain chain = build_chain(spec);

  CHECK(chain.matrix.source_count() == spec.T + spec.m);
  CHECK(chain.matrix.target_count() == spec.T);

  // Accepted margin re-verified post hoc on the original block.
  std::vector<ProbVector> base(chain.matrix.rows().begin(),
                               chain.matrix.rows().begin() + spec.T);
  const MarginReport recheck =
      separation_margin(TransitionMatrix(std::move(base), spec.T));
  CHECK(recheck.finite);
  CHECK(recheck.gamma >= spec.min_gamma);
  CHECK(recheck.gamma == chain.margin.gamma);

  // Ground truth admissibility and consistency with the appended rows.
  REQUIRE(chain.truth.alpha_star.size() == static_cast<std::size_t>(spec.m));
  for (std::int32_t u = 0; u < spec.m; ++u) {
    const SparseVec& alpha = chain.truth.alpha_star[static_cast<std::size_t>(u)];
    CHECK(alpha.size() <= static_cast<std::size_t>(spec.s));
    double norm_sq = 0.0;
    for (const SparseEntry& entry : alpha) {
      CHECK(entry.index >= 0);
      CHECK(entry.index < spec.T);
      norm_sq += entry.value * entry.value;
    }
    CHECK(std::sqrt(norm_sq) <= spec.norm_bound_B + 1e-12);

    const ProbVector expected = apply_link(chain.link, chain.embedding, alpha);
    const ProbVector& appended = chain.matrix.row(spec.T + u);
    for (std::int32_t k = 0; k < spec.T; ++k)
      CHECK(appended[k] == expected[k]);
  }

  // Every row respects the floor.
  for (std::int32_t v = 0; v < chain.matrix.source_count(); ++v)
    for (std::int32_t k = 0; k < spec.T; ++k)
      CHECK((chain.matrix.row(v)[k] == 0.0 ||
             chain.matrix.row(v)[k] >= spec.floor_c));
}

TEST_CASE("chain generation is deterministic in the seed") {
  ChainSpec spec;
  spec.T = 12;
  spec.d = 6;
  spec.m = 3;
  spec.seed = 99;
  const SyntheticChain a = build_chain(spec);
  const SyntheticChain b = build_chain(spec);
  for (std::int32_t v = 0; v < a.matrix.source_count(); ++v)
    CHECK(a.matrix.row(v).entries() == b.matrix.row(v).entries());
  CHECK(a.margin.gamma == b.margin.gamma);

  spec.seed = 100;
  const SyntheticChain c = build_chain(spec);
  bool any_different = false;
  for (std::int32_t v = 0; v < a.matrix.source_count(); ++v)
    if (a.matrix.row(v).entries() != c.matrix.row(v).entries())
      any_different = true;
  CHECK(any_different);
}

TEST_CASE("unreachable margin targets are rejected with a clear error") {
  ChainSpec spec;
  spec.T = 8;
  spec.d = 4;
  spec.m = 1;
  spec.min_gamma = 1000.0;  // unattainable
  spec.seed = 5;
  CHECK_THROWS_AS(build_chain(spec), std::runtime_error);
}

TEST_CASE("one-to-one truth copies rows exactly") {
  ChainSpec spec;
  spec.T = 15;
  spec.d = 6;
  spec.m = 1;
  spec.seed = 31;
  const SyntheticChain chain = build_chain(spec);
  std::vector<ProbVector> base(chain.matrix.rows().begin(),
                               chain.matrix.rows().begin() + spec.T);
  const TransitionMatrix P(std::move(base), spec.T);

  Rng rng(77);
  const GroundTruth truth = one_to_one_truth(P, 4, rng);
  REQUIRE(truth.alpha_star.size() == 4);
  CHECK(truth.sparsity_s == 1);
  std::set<TokenId> targets;
  for (std::int32_t u = 0; u < 4; ++u) {
    REQUIRE(truth.alpha_star[static_cast<std::size_t>(u)].size() == 1);
    const TokenId v = truth.v_star(u);
    CHECK(v == truth.alpha_star[static_cast<std::size_t>(u)][0].index);
    targets.insert(v);
    // Copied row: divergence is exactly zero.
    CHECK(kl_divergence(truth.q_star[static_cast<std::size_t>(u)], P.row(v)) ==
          0.0);
    CHECK(truth.q_star[static_cast<std::size_t>(u)].entries() ==
          P.row(v).entries());
  }
  CHECK(targets.size() == 4);  // one-to-one, no collisions
}

TEST_CASE("lipschitz estimate is positive and finite") {
  Rng rng(41);
  const EmbeddingMatrix E = random_embedding(10, 4, rng);
  const LinkFunction f{1.0, 1e-3};
  const double L = estimate_lipschitz(f, E, rng);
  CHECK(L > 0.0);
  CHECK(std::isfinite(L));
}

TEST_CASE("chain file round-trips matrix and ground truth exactly") {
  ChainSpec spec;
  spec.T = 10;
  spec.d = 5;
  spec.m = 3;
  spec.s = 2;
  spec.seed = 13;
  const SyntheticChain chain = build_chain(spec);

  std::stringstream buffer;
  write_chain(buffer, chain.matrix, &chain.truth);
  const ChainFile file = read_chain(buffer);

  REQUIRE(file.matrix.source_count() == chain.matrix.source_count());
  for (std::int32_t v = 0; v < chain.matrix.source_count(); ++v)
    CHECK(file.matrix.row(v).entries() == chain.matrix.row(v).entries());

  REQUIRE(file.truth.has_value());
  CHECK(file.truth->sparsity_s == chain.truth.sparsity_s);
  CHECK(file.truth->norm_bound_B == chain.truth.norm_bound_B);
  REQUIRE(file.truth->alpha_star.size() == chain.truth.alpha_star.size());
  for (std::size_t u = 0; u < chain.truth.alpha_star.size(); ++u) {
    REQUIRE(file.truth->alpha_star[u].size() == chain.truth.alpha_star[u].size());
    for (std::size_t k = 0; k < chain.truth.alpha_star[u].size(); ++k) {
      CHECK(file.truth->alpha_star[u][k].index ==
            chain.truth.alpha_star[u][k].index);
      CHECK(file.truth->alpha_star[u][k].value ==
            chain.truth.alpha_star[u][k].value);
    }
  }

  // Without a truth section the optional stays empty.
  std::stringstream plain;
  write_chain(plain, chain.matrix);
  CHECK_FALSE(read_chain(plain).truth.has_value());
}

TEST_CASE("chain spec validation rejects malformed parameters") {
  ChainSpec spec;
  spec.T = 1;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.T = 10;
  spec.d = 0;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.d = 4;
  spec.floor_c = 0.0;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.floor_c = 2.0;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.floor_c = 1e-3;
  spec.s = 11;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.s = 1;
  CHECK_NOTHROW(spec.validate());
}
