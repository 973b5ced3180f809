#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include <doctest.h>

#include "vocab_expand/estimators.hpp"

using namespace vexp;

namespace {

SyntheticChain small_chain(std::int32_t T, std::int32_t d, std::int32_t m,
                           std::int32_t s, std::uint64_t seed) {
  ChainSpec spec;
  spec.T = T;
  spec.d = d;
  spec.m = m;
  spec.s = s;
  spec.cluster_count = std::min<std::int32_t>(5, T);
  spec.seed = seed;
  return build_chain(spec);
}

TransitionMatrix original_block(const SyntheticChain& chain) {
  std::vector<ProbVector> rows(
      chain.matrix.rows().begin(),
      chain.matrix.rows().begin() + chain.matrix.target_count());
  return TransitionMatrix(std::move(rows), chain.matrix.target_count());
}

std::vector<TokenId> support_of(const SparseVec& alpha) {
  std::vector<TokenId> out;
  for (const SparseEntry& e : alpha) out.push_back(e.index);
  return out;
}

}  // namespace

TEST_CASE("identification recovers copied rows from exact statistics") {
  const SyntheticChain chain = small_chain(15, 6, 1, 1, 7);
  const TransitionMatrix base = original_block(chain);
  Rng rng(3);
  const GroundTruth truth = one_to_one_truth(base, 4, rng);

  // Feed the exact rows as "empirical" estimates.
  EmpiricalDistribution stats;
  for (std::int32_t u = 0; u < 4; ++u)
    stats.per_token.push_back(
        TokenEstimate{1000, true, truth.q_star[static_cast<std::size_t>(u)]});
  stats.n_min = 1000;

  const IdentificationResult result = identify_one_to_one(stats, base, &truth);
  CHECK(result.all_succeeded());
  CHECK(result.success_count() == 4);
  for (std::int32_t u = 0; u < 4; ++u) {
    const TokenIdentification& one = result.per_token[static_cast<std::size_t>(u)];
    CHECK(one.identified);
    CHECK(one.v_hat == truth.v_star(u));
    CHECK(one.kl_to_best == 0.0);
    CHECK(one.candidate_set_size >= 1);
  }
}

TEST_CASE("tokens without data come back unidentified") {
  const TransitionMatrix base(
      {ProbVector({0.6, 0.4}), ProbVector({0.1, 0.9})}, 2);
  EmpiricalDistribution stats;
  stats.per_token.push_back(TokenEstimate{});  // no observations
  stats.n_min = 0;
  const IdentificationResult result = identify_one_to_one(stats, base);
  REQUIRE(result.per_token.size() == 1);
  CHECK_FALSE(result.per_token[0].identified);
  CHECK_FALSE(result.all_succeeded());
}

TEST_CASE("divergence and likelihood identification routes agree") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const SyntheticChain chain = small_chain(18, 6, 1, 1, seed);
    const TransitionMatrix base = original_block(chain);
    Rng rng(seed * 13 + 1);
    const GroundTruth truth = one_to_one_truth(base, 3, rng);
    const TransitionMatrix expanded = expand_state_space(base, truth.q_star);

    SamplingSpec sspec;
    sspec.prefix_len = 1;
    const Dataset data = generate_dataset(expanded, sspec, 400, rng);
    const EmpiricalDistribution stats = empirical_distributions(data);

    const IdentificationResult via_kl = identify_one_to_one(stats, base, &truth);
    const IdentificationResult via_nll =
        identify_one_to_one_nll(data, base, &truth);
    REQUIRE(via_kl.per_token.size() == via_nll.per_token.size());
    for (std::size_t u = 0; u < via_kl.per_token.size(); ++u) {
      CHECK(via_kl.per_token[u].identified == via_nll.per_token[u].identified);
      CHECK(via_kl.per_token[u].v_hat == via_nll.per_token[u].v_hat);
    }
  }
}

TEST_CASE("identification is consistent at large sample sizes") {
  // Margin-positive chains, huge per-token counts: every replication and
  // every token must resolve to the copied source row.
  for (std::uint64_t seed = 1; seed <= 2; ++seed) {
    const SyntheticChain chain = small_chain(12, 6, 1, 1, seed + 50);
    const TransitionMatrix base = original_block(chain);
    Rng rng(seed);
    const GroundTruth truth = one_to_one_truth(base, 2, rng);
    const TransitionMatrix expanded = expand_state_space(base, truth.q_star);

    SamplingSpec sspec;
    const Dataset data = generate_dataset(expanded, sspec, 2000000, rng);
    const EmpiricalDistribution stats = empirical_distributions(data);
    CHECK(stats.n_min >= 900000);  // roughly balanced across two tokens

    const IdentificationResult result = identify_one_to_one(stats, base, &truth);
    CHECK(result.all_succeeded());
  }
}

TEST_CASE("smooth gradient matches central finite differences") {
  Rng rng(23);
  const SyntheticChain chain = small_chain(10, 5, 1, 1, 11);
  const ProbVector& q = chain.matrix.row(10);

  // Tune path: X is the full embedding matrix.
  const Eigen::MatrixXd& X_full = chain.embedding.entries();
  // Fit path: X restricted to a two-coordinate support.
  Eigen::MatrixXd X_fit(10, 2);
  X_fit.col(0) = X_full * X_full.row(2).transpose();
  X_fit.col(1) = X_full * X_full.row(7).transpose();

  for (const Eigen::MatrixXd* X :
       std::initializer_list<const Eigen::MatrixXd*>{&X_full, &X_fit}) {
    for (int trial = 0; trial < 10; ++trial) {
      Eigen::VectorXd x(X->cols());
      for (std::int32_t k = 0; k < x.size(); ++k) x[k] = normal_double(rng);
      const Eigen::VectorXd grad =
          smooth_kl_gradient(q, *X, chain.link.temperature, x);
      const double h = 1e-5;
      for (std::int32_t k = 0; k < x.size(); ++k) {
        Eigen::VectorXd hi = x;
        Eigen::VectorXd lo = x;
        hi[k] += h;
        lo[k] -= h;
        const double numeric =
            (smooth_kl_value(q, *X, chain.link.temperature, hi) -
             smooth_kl_value(q, *X, chain.link.temperature, lo)) /
            (2.0 * h);
        const double scale = std::max(1.0, std::abs(grad[k]));
        CHECK(std::abs(numeric - grad[k]) / scale <= 1e-4);
      }
    }
  }
}

TEST_CASE("inner solver matches a dense one-dimensional grid search") {
  const SyntheticChain chain = small_chain(8, 4, 1, 1, 19);
  const ProbVector& q = chain.matrix.row(8);
  const double B = 3.0;

  for (TokenId j = 0; j < 8; ++j) {
    const SupportSolution sol = solve_support(q, chain.embedding, chain.link, {j}, B);
    REQUIRE(sol.support == std::vector<TokenId>{j});
    CHECK(std::abs(sol.coeffs[0]) <= B + 1e-10);

    Eigen::MatrixXd X(8, 1);
    X.col(0) = chain.embedding.entries() *
               chain.embedding.entries().row(j).transpose();
    double grid_best = std::numeric_limits<double>::infinity();
    for (double a = -B; a <= B; a += 1e-3) {
      Eigen::VectorXd x(1);
      x[0] = a;
      grid_best = std::min(
          grid_best, smooth_kl_value(q, X, chain.link.temperature, x));
    }
    CHECK(sol.smooth_value <= grid_best + 1e-6);
  }
}

TEST_CASE("enumeration drives the objective to zero on realizable targets") {
  // An inactive floor keeps the link smooth, so the realizable optimum is
  // reachable by the inner projected-gradient solve.
  ChainSpec spec;
  spec.T = 8;
  spec.d = 4;
  spec.m = 2;
  spec.s = 2;
  spec.cluster_count = 5;
  spec.floor_c = 1e-12;
  spec.seed = 29;
  const SyntheticChain chain = build_chain(spec);
  for (std::int32_t u = 0; u < 2; ++u) {
    const ProbVector& q = chain.matrix.row(8 + u);
    const SparseFit fit =
        fit_sparse_enumeration(q, chain.embedding, chain.link, 2, 3.0);
    CHECK(fit.method == FitMethod::kEnumeration);
    CHECK(fit.objective_value <= 1e-8);
    CHECK(fit.alpha_hat.size() <= 2);
    double norm_sq = 0.0;
    for (const SparseEntry& e : fit.alpha_hat) norm_sq += e.value * e.value;
    CHECK(std::sqrt(norm_sq) <= 3.0 + 1e-10);
  }
}

TEST_CASE("enumeration rejects oversized search spaces") {
  const SyntheticChain chain = small_chain(60, 8, 1, 1, 31);
  const ProbVector& q = chain.matrix.row(60);
  CHECK_THROWS_AS(
      fit_sparse_enumeration(q, chain.embedding, chain.link, 4, 3.0),
      std::length_error);
}

TEST_CASE("greedy never beats the oracle and stays within its gap") {
  Rng noise(5);
  for (std::uint64_t seed = 1; seed <= 15; ++seed) {
    const SyntheticChain chain = small_chain(10, 5, 1, 2, seed + 100);
    // Perturbed target: random convex mixture keeps it non-realizable.
    std::vector<double> mix(10, 0.0);
    double total = 0.0;
    for (std::size_t k = 0; k < mix.size(); ++k) {
      mix[k] = chain.matrix.row(10)[static_cast<std::int32_t>(k)] + 0.02 +
               0.05 * uniform_double(noise);
      total += mix[k];
    }
    for (double& v : mix) v /= total;
    const ProbVector q(mix);

    const SparseFit oracle =
        fit_sparse_enumeration(q, chain.embedding, chain.link, 2, 3.0);
    const SparseFit greedy =
        fit_sparse_greedy(q, chain.embedding, chain.link, 2, 3.0);
    CHECK(greedy.method == FitMethod::kGreedyPg);
    CHECK(greedy.objective_value >= oracle.objective_value - 1e-12);
    CHECK(greedy.objective_value <= oracle.objective_value + 1e-2);
  }
}

TEST_CASE("greedy and enumeration coincide for singleton supports") {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    const SyntheticChain chain = small_chain(9, 4, 1, 1, seed + 200);
    const ProbVector& q = chain.matrix.row(9);
    const SparseFit a =
        fit_sparse_enumeration(q, chain.embedding, chain.link, 1, 3.0);
    const SparseFit b =
        fit_sparse_greedy(q, chain.embedding, chain.link, 1, 3.0);
    CHECK(a.objective_value == b.objective_value);
    REQUIRE(a.alpha_hat.size() == b.alpha_hat.size());
    for (std::size_t k = 0; k < a.alpha_hat.size(); ++k) {
      CHECK(a.alpha_hat[k].index == b.alpha_hat[k].index);
      CHECK(a.alpha_hat[k].value == b.alpha_hat[k].value);
    }
  }
}

TEST_CASE("greedy recovers well-separated supports at scale") {
  std::int32_t hits = 0;
  const std::int32_t trials = 100;
  for (std::int32_t trial = 0; trial < trials; ++trial) {
    ChainSpec spec;
    spec.T = 50;
    spec.d = 16;
    spec.m = 1;
    spec.s = 3;
    spec.floor_c = 1e-12;
    spec.seed = 1000 + static_cast<std::uint64_t>(trial);
    const SyntheticChain chain = build_chain(spec);

    // Well-separated coefficients on three distinct random tokens.
    Rng rng(mix_seed(spec.seed, 7, 0));
    std::vector<TokenId> pool(50);
    for (std::int32_t i = 0; i < 50; ++i) pool[static_cast<std::size_t>(i)] = i;
    for (std::int32_t i = 0; i < 3; ++i) {
      const std::int64_t j = i + uniform_int(rng, 50 - i);
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    std::vector<TokenId> expected(pool.begin(), pool.begin() + 3);
    std::sort(expected.begin(), expected.end());
    const double coeffs[3] = {1.8, 1.1, 0.6};
    SparseVec alpha;
    for (std::size_t k = 0; k < 3; ++k) alpha.push_back({expected[k], coeffs[k]});
    const ProbVector q = apply_link(chain.link, chain.embedding, alpha);

    const SparseFit fit =
        fit_sparse_greedy(q, chain.embedding, chain.link, 3, 3.0);
    std::vector<TokenId> got = support_of(fit.alpha_hat);
    std::sort(got.begin(), got.end());
    if (expected == got) ++hits;
  }
  CHECK(hits >= 90);
}

TEST_CASE("every sparse fit respects the constraint set") {
  Rng rng(71);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const SyntheticChain chain = small_chain(12, 5, 1, 2, seed + 300);
    std::vector<double> w(12);
    double total = 0.0;
    for (double& v : w) {
      v = 0.05 + uniform_double(rng);
      total += v;
    }
    for (double& v : w) v /= total;
    const ProbVector q(w);
    const double B = 2.0;
    for (const SparseFit& fit :
         {fit_sparse_enumeration(q, chain.embedding, chain.link, 2, B),
          fit_sparse_greedy(q, chain.embedding, chain.link, 2, B)}) {
      CHECK(fit.alpha_hat.size() <= 2);
      double norm_sq = 0.0;
      for (const SparseEntry& e : fit.alpha_hat) {
        CHECK(e.index >= 0);
        CHECK(e.index < 12);
        norm_sq += e.value * e.value;
      }
      CHECK(std::sqrt(norm_sq) <= B + 1e-10);
    }
  }
}

TEST_CASE("risk evaluation reports zero for perfect fits") {
  const SyntheticChain chain = small_chain(10, 5, 2, 1, 41);
  std::vector<SparseFit> fits;
  for (std::int32_t u = 0; u < 2; ++u) {
    SparseFit fit;
    fit.alpha_hat = chain.truth.alpha_star[static_cast<std::size_t>(u)];
    fit.objective_value = 0.0;
    fit.converged = true;
    fits.push_back(fit);
  }
  const RiskReport report =
      evaluate_risk(fits, chain.truth, chain.embedding, chain.link);
  REQUIRE(report.per_token.size() == 2);
  CHECK(report.per_token[0] == 0.0);
  CHECK(report.per_token[1] == 0.0);
  CHECK(report.max_risk == 0.0);

  // A deliberately wrong coefficient produces positive risk.
  fits[0].alpha_hat = SparseVec{{0, -2.5}};
  const RiskReport worse =
      evaluate_risk(fits, chain.truth, chain.embedding, chain.link);
  CHECK(worse.max_risk > 0.0);
  CHECK(worse.max_risk == worse.per_token[0]);
}

TEST_CASE("embedding tuning reaches a realizable smooth target") {
  ChainSpec spec;
  spec.T = 50;
  spec.d = 16;
  spec.m = 1;
  spec.s = 2;
  spec.floor_c = 1e-12;  // effectively smooth world
  spec.seed = 61;
  const SyntheticChain chain = build_chain(spec);
  const ProbVector target(raw_softmax(
      chain.link, chain.embedding,
      embed_sparse(chain.embedding, chain.truth.alpha_star[0])));

  Rng rng(5);
  Eigen::VectorXd init(spec.d);
  for (std::int32_t k = 0; k < spec.d; ++k) init[k] = normal_double(rng);

  const std::vector<ProbVector> before = chain.matrix.rows();
  const TuneResult tuned = tune_embedding(target, chain.embedding, chain.link,
                                          init, 2000, TuneSchedule{});
  CHECK(tuned.final_kl <= 1e-2);
  CHECK(tuned.smooth_kl <= 1e-2);
  CHECK(tuned.steps_run <= 2000);
  CHECK(tuned.embedding.size() == spec.d);

  // Tuning must leave the chain untouched (zero forgetting).
  for (std::int32_t v = 0; v < chain.matrix.source_count(); ++v)
    CHECK(chain.matrix.row(v).entries() ==
          before[static_cast<std::size_t>(v)].entries());
}

TEST_CASE("tuning aborts with diagnostics when the step size explodes") {
  const SyntheticChain chain = small_chain(10, 5, 1, 1, 67);
  const ProbVector target(raw_softmax(
      chain.link, chain.embedding,
      embed_sparse(chain.embedding, chain.truth.alpha_star[0])));
  Eigen::VectorXd init = Eigen::VectorXd::Ones(5);
  TuneSchedule schedule;
  schedule.initial_lr = 1e8;  // hopeless step size
  CHECK_THROWS_AS(
      tune_embedding(target, chain.embedding, chain.link, init, 5000, schedule),
      std::runtime_error);
}

TEST_CASE("fit records round-trip through the text format") {
  const SyntheticChain chain = small_chain(10, 5, 2, 2, 83);
  std::ostringstream buffer;
  std::vector<SparseFit> fits;
  for (std::int32_t u = 0; u < 2; ++u) {
    fits.push_back(fit_sparse_greedy(chain.matrix.row(10 + u), chain.embedding,
                                     chain.link, 2, 3.0));
    write_sparse_fit(buffer, 10 + u, fits.back());
  }
  std::istringstream input(buffer.str());
  const auto records = read_sparse_fits(input);
  REQUIRE(records.size() == 2);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(records[k].first == 10 + static_cast<TokenId>(k));
    const SparseFit& fit = records[k].second;
    CHECK(fit.method == fits[k].method);
    CHECK(fit.converged == fits[k].converged);
    REQUIRE(fit.alpha_hat.size() == fits[k].alpha_hat.size());
    for (std::size_t j = 0; j < fit.alpha_hat.size(); ++j) {
      CHECK(fit.alpha_hat[j].index == fits[k].alpha_hat[j].index);
      CHECK(fit.alpha_hat[j].value ==
            doctest::Approx(fits[k].alpha_hat[j].value).epsilon(1e-12));
    }
  }
}
