#include "vocab_expand/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace vexp {

namespace {

bool is_sorted_unique(const std::vector<TokenId>& support) {
  for (std::size_t i = 1; i < support.size(); ++i)
    if (support[i] <= support[i - 1]) return false;
  return true;
}

SparseVec alpha_from(const std::vector<TokenId>& support,
                     const Eigen::VectorXd& coeffs) {
  SparseVec alpha;
  alpha.reserve(support.size());
  for (std::size_t i = 0; i < support.size(); ++i) {
    const double v = coeffs[static_cast<Eigen::Index>(i)];
    if (v != 0.0) alpha.push_back({support[i], v});
  }
  return alpha;
}

double floored_objective(const ProbVector& q_hat, const EmbeddingMatrix& E,
                         const LinkFunction& f, const SparseVec& alpha) {
  try {
    return kl_divergence(q_hat, apply_link(f, E, alpha));
  } catch (const std::domain_error&) {
    return std::numeric_limits<double>::infinity();
  }
}

// Ranking shared by both sparse methods; lexicographically smallest support
// wins exact ties so the two methods break ties identically.
bool better_than(const SupportSolution& a, const SupportSolution& b) {
  if (a.floored_kl != b.floored_kl) return a.floored_kl < b.floored_kl;
  if (a.smooth_value != b.smooth_value) return a.smooth_value < b.smooth_value;
  return a.support < b.support;
}

}  // namespace

// ---------------------------------------------------------------------------
// Identification.

std::int32_t IdentificationResult::success_count() const {
  std::int32_t n = 0;
  for (const TokenIdentification& t : per_token) n += t.success ? 1 : 0;
  return n;
}

bool IdentificationResult::all_succeeded() const {
  return success_count() == static_cast<std::int32_t>(per_token.size());
}

IdentificationResult identify_one_to_one(const EmpiricalDistribution& stats,
                                         const TransitionMatrix& P,
                                         const GroundTruth* truth) {
  const std::int32_t T = P.target_count();
  IdentificationResult result;
  result.per_token.resize(stats.per_token.size());
  for (std::size_t u = 0; u < stats.per_token.size(); ++u) {
    const TokenEstimate& est = stats.per_token[u];
    TokenIdentification& out = result.per_token[u];
    if (!est.has_estimate) continue;
    if (est.q_hat.size() != T)
      throw std::invalid_argument("identify_one_to_one: estimate/matrix size mismatch");

    TokenId best = -1;
    double best_kl = std::numeric_limits<double>::infinity();
    std::int32_t candidates = 0;
    for (TokenId v = 0; v < T; ++v) {
      const double kl = kl_divergence(est.q_hat, P.row(v));
      if (std::isinf(kl)) continue;  // row does not cover supp(q_hat)
      ++candidates;
      if (kl < best_kl) {
        best_kl = kl;
        best = v;
      }
    }
    out.candidate_set_size = candidates;
    if (best >= 0) {
      out.identified = true;
      out.v_hat = best;
      out.kl_to_best = best_kl;
    }
    if (truth != nullptr)
      out.success =
          out.identified && out.v_hat == truth->v_star(static_cast<std::int32_t>(u));
  }
  return result;
}

IdentificationResult identify_one_to_one_nll(const Dataset& D,
                                             const TransitionMatrix& P,
                                             const GroundTruth* truth) {
  const std::int32_t T = P.target_count();
  const std::int32_t m = D.new_count();
  if (D.vocab() != T)
    throw std::invalid_argument("identify_one_to_one_nll: dataset/matrix size mismatch");

  std::vector<std::vector<std::int64_t>> counts(
      static_cast<std::size_t>(m),
      std::vector<std::int64_t>(static_cast<std::size_t>(T), 0));
  for (std::int64_t i = 0; i < D.size(); ++i) {
    const std::int64_t len = D.length(i);
    for (std::int64_t j = 0; j + 1 < len; ++j) {
      const TokenId tok = D.token(i, j);
      if (tok >= T)
        ++counts[static_cast<std::size_t>(tok - T)]
                [static_cast<std::size_t>(D.token(i, j + 1))];
    }
  }

  IdentificationResult result;
  result.per_token.resize(static_cast<std::size_t>(m));
  for (std::int32_t u = 0; u < m; ++u) {
    const std::vector<std::int64_t>& c = counts[static_cast<std::size_t>(u)];
    TokenIdentification& out = result.per_token[static_cast<std::size_t>(u)];
    const std::int64_t total = std::accumulate(c.begin(), c.end(), std::int64_t{0});
    if (total == 0) continue;

    TokenId best = -1;
    double best_nll = std::numeric_limits<double>::infinity();
    std::int32_t candidates = 0;
    for (TokenId v = 0; v < T; ++v) {
      const ProbVector& row = P.row(v);
      double nll = 0.0;
      bool finite = true;
      for (std::int32_t k = 0; k < T; ++k) {
        if (c[static_cast<std::size_t>(k)] == 0) continue;
        if (row[k] <= 0.0) {
          finite = false;
          break;
        }
        nll -= static_cast<double>(c[static_cast<std::size_t>(k)]) * std::log(row[k]);
      }
      if (!finite) continue;
      ++candidates;
      if (nll < best_nll) {
        best_nll = nll;
        best = v;
      }
    }
    out.candidate_set_size = candidates;
    if (best >= 0) {
      out.identified = true;
      out.v_hat = best;
      // Divergence of the count frequencies from the winning row, derived
      // from the same raw counts.
      const ProbVector& row = P.row(best);
      double kl = 0.0;
      for (std::int32_t k = 0; k < T; ++k) {
        if (c[static_cast<std::size_t>(k)] == 0) continue;
        const double freq =
            static_cast<double>(c[static_cast<std::size_t>(k)]) / static_cast<double>(total);
        kl += freq * std::log(freq / row[k]);
      }
      out.kl_to_best = kl;
    }
    if (truth != nullptr)
      out.success = out.identified && out.v_hat == truth->v_star(u);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Smooth objective.

namespace {

void check_smooth_args(const ProbVector& q_hat, const Eigen::MatrixXd& X,
                       double temperature, const Eigen::VectorXd& x) {
  if (q_hat.size() != static_cast<std::int32_t>(X.rows()))
    throw std::invalid_argument("smooth objective: q_hat/X row mismatch");
  if (x.size() != X.cols())
    throw std::invalid_argument("smooth objective: x/X column mismatch");
  if (!(temperature > 0.0))
    throw std::invalid_argument("smooth objective: temperature must be positive");
}

Eigen::VectorXd stable_softmax(const Eigen::VectorXd& z) {
  const double top = z.maxCoeff();
  Eigen::VectorXd p = (z.array() - top).exp();
  p /= p.sum();
  return p;
}

}  // namespace

double smooth_kl_value(const ProbVector& q_hat, const Eigen::MatrixXd& X,
                       double temperature, const Eigen::VectorXd& x) {
  check_smooth_args(q_hat, X, temperature, x);
  const Eigen::VectorXd z = X * x / temperature;
  const double top = z.maxCoeff();
  const double lse = std::log((z.array() - top).exp().sum()) + top;
  double value = 0.0;
  for (std::int32_t k = 0; k < q_hat.size(); ++k) {
    const double q = q_hat[k];
    if (q > 0.0) value += q * (std::log(q) - (z[k] - lse));
  }
  return value;
}

Eigen::VectorXd smooth_kl_gradient(const ProbVector& q_hat,
                                   const Eigen::MatrixXd& X,
                                   double temperature, const Eigen::VectorXd& x) {
  check_smooth_args(q_hat, X, temperature, x);
  const Eigen::VectorXd p = stable_softmax(X * x / temperature);
  Eigen::VectorXd diff = p;
  for (std::int32_t k = 0; k < q_hat.size(); ++k) diff[k] -= q_hat[k];
  return X.transpose() * diff / temperature;
}

// ---------------------------------------------------------------------------
// Inner solver.

namespace {

Eigen::VectorXd project_ball(Eigen::VectorXd x, double B) {
  const double norm = x.norm();
  if (norm > B) x *= B / norm;
  return x;
}

}  // namespace

SupportSolution solve_support(const ProbVector& q_hat, const EmbeddingMatrix& E,
                              const LinkFunction& f,
                              const std::vector<TokenId>& support, double B) {
  if (support.empty())
    throw std::invalid_argument("solve_support: empty support");
  if (!is_sorted_unique(support))
    throw std::invalid_argument("solve_support: support must be sorted and unique");
  if (support.front() < 0 || support.back() >= E.vocab())
    throw std::out_of_range("solve_support: support index outside vocabulary");
  if (q_hat.size() != E.vocab())
    throw std::invalid_argument("solve_support: q_hat/embedding size mismatch");
  if (!(B > 0.0)) throw std::invalid_argument("solve_support: B must be positive");

  const auto k = static_cast<Eigen::Index>(support.size());
  Eigen::MatrixXd X(E.vocab(), k);
  for (Eigen::Index j = 0; j < k; ++j)
    X.col(j) = E.entries() *
               E.entries().row(support[static_cast<std::size_t>(j)]).transpose();

  SupportSolution sol;
  sol.support = support;

  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(k);
  double value = smooth_kl_value(q_hat, X, f.temperature, alpha);
  double trial_step = 1.0;

  for (std::int32_t iter = 0; iter < kMaxInnerIterations; ++iter) {
    const Eigen::VectorXd grad = smooth_kl_gradient(q_hat, X, f.temperature, alpha);

    // Backtracking on the projected-gradient mapping G = (alpha - next)/eta:
    // accept when the value drops by at least 1e-4 * eta * |G|^2.
    double eta = trial_step;
    bool accepted = false;
    Eigen::VectorXd next;
    Eigen::VectorXd mapping;
    double next_value = value;
    for (std::int32_t halvings = 0; halvings < 60; ++halvings) {
      next = project_ball(alpha - eta * grad, B);
      mapping = (alpha - next) / eta;
      next_value = smooth_kl_value(q_hat, X, f.temperature, next);
      if (next_value <= value - 1e-4 * eta * mapping.squaredNorm()) {
        accepted = true;
        break;
      }
      eta *= 0.5;
    }
    if (!accepted) {
      // No descent step exists at double precision; stationary in practice.
      const Eigen::VectorXd g1 = alpha - project_ball(alpha - grad, B);
      sol.converged = g1.norm() <= kInnerTolerance * 1e3 || value <= 1e-15;
      break;
    }

    alpha = next;
    value = next_value;
    trial_step = eta * 2.0;
    sol.iterations = iter + 1;
    if (mapping.norm() <= kInnerTolerance) {
      sol.converged = true;
      break;
    }
  }

  sol.coeffs = alpha;
  sol.smooth_value = value;
  sol.floored_kl = floored_objective(q_hat, E, f, alpha_from(support, alpha));
  return sol;
}

// ---------------------------------------------------------------------------
// Enumeration oracle.

namespace {

double binomial_coefficient(std::int32_t n, std::int32_t k) {
  double out = 1.0;
  for (std::int32_t i = 1; i <= k; ++i) {
    out *= static_cast<double>(n - k + i) / static_cast<double>(i);
    if (out > 1e18) return out;
  }
  return out;
}

SparseFit fit_from(const SupportSolution& sol, FitMethod method) {
  SparseFit fit;
  fit.alpha_hat = alpha_from(sol.support, sol.coeffs);
  fit.objective_value = sol.floored_kl;
  fit.method = method;
  fit.converged = sol.converged;
  return fit;
}

void check_fit_args(const ProbVector& q_hat, const EmbeddingMatrix& E,
                    std::int32_t s, double B) {
  if (s < 1) throw std::invalid_argument("sparse fit: s must be >= 1");
  if (s > E.vocab())
    throw std::invalid_argument("sparse fit: s exceeds vocabulary size");
  if (!(B > 0.0)) throw std::invalid_argument("sparse fit: B must be positive");
  if (q_hat.size() != E.vocab())
    throw std::invalid_argument("sparse fit: q_hat/embedding size mismatch");
}

}  // namespace

SparseFit fit_sparse_enumeration(const ProbVector& q_hat,
                                 const EmbeddingMatrix& E,
                                 const LinkFunction& f, std::int32_t s,
                                 double B) {
  check_fit_args(q_hat, E, s, B);
  const std::int32_t T = E.vocab();
  if (binomial_coefficient(T, s) > kEnumerationBudget) {
    std::ostringstream msg;
    msg << "fit_sparse_enumeration: C(" << T << ", " << s
        << ") exceeds the enumeration budget of " << kEnumerationBudget
        << "; use fit_sparse_greedy";
    throw std::length_error(msg.str());
  }

  std::optional<SupportSolution> best;
  for (std::int32_t size = 1; size <= s; ++size) {
    std::vector<TokenId> comb(static_cast<std::size_t>(size));
    std::iota(comb.begin(), comb.end(), 0);
    while (true) {
      SupportSolution sol = solve_support(q_hat, E, f, comb, B);
      if (!best || better_than(sol, *best)) best = std::move(sol);

      std::int32_t i = size - 1;
      while (i >= 0 && comb[static_cast<std::size_t>(i)] == T - size + i) --i;
      if (i < 0) break;
      ++comb[static_cast<std::size_t>(i)];
      for (std::int32_t j = i + 1; j < size; ++j)
        comb[static_cast<std::size_t>(j)] = comb[static_cast<std::size_t>(j) - 1] + 1;
    }
  }
  return fit_from(*best, FitMethod::kEnumeration);
}

// ---------------------------------------------------------------------------
// Screened greedy.

namespace {

class SupportMemo {
 public:
  SupportMemo(const ProbVector& q_hat, const EmbeddingMatrix& E,
              const LinkFunction& f, double B)
      : q_hat_(q_hat), E_(E), f_(f), B_(B) {}

  const SupportSolution& solve(const std::vector<TokenId>& support) {
    auto it = cache_.find(support);
    if (it == cache_.end()) {
      it = cache_.emplace(support, solve_support(q_hat_, E_, f_, support, B_)).first;
      if (!best_ || better_than(it->second, *best_)) best_ = it->second;
    }
    return it->second;
  }

  const SupportSolution& best() const { return *best_; }

  // Best `count` solved supports of exactly `size` coordinates, ranked like
  // enumeration.
  std::vector<std::vector<TokenId>> top_of_size(std::size_t size,
                                                std::int32_t count) const {
    std::vector<const SupportSolution*> rows;
    for (const auto& [support, sol] : cache_)
      if (support.size() == size) rows.push_back(&sol);
    std::sort(rows.begin(), rows.end(),
              [](const SupportSolution* a, const SupportSolution* b) {
                return better_than(*a, *b);
              });
    if (rows.size() > static_cast<std::size_t>(count))
      rows.resize(static_cast<std::size_t>(count));
    std::vector<std::vector<TokenId>> out;
    out.reserve(rows.size());
    for (const SupportSolution* row : rows) out.push_back(row->support);
    return out;
  }

 private:
  const ProbVector& q_hat_;
  const EmbeddingMatrix& E_;
  const LinkFunction& f_;
  double B_;
  std::map<std::vector<TokenId>, SupportSolution> cache_;
  std::optional<SupportSolution> best_;
};

std::vector<TokenId> insert_sorted(std::vector<TokenId> support, TokenId v) {
  support.insert(std::upper_bound(support.begin(), support.end(), v), v);
  return support;
}

}  // namespace

SparseFit fit_sparse_greedy(const ProbVector& q_hat, const EmbeddingMatrix& E,
                            const LinkFunction& f, std::int32_t s, double B) {
  check_fit_args(q_hat, E, s, B);
  const std::int32_t T = E.vocab();
  SupportMemo memo(q_hat, E, f, B);

  // Every singleton, always: anchors the ranking and makes the s = 1 case
  // identical to enumeration.
  for (TokenId v = 0; v < T; ++v) memo.solve({v});
  if (s > 1) {
    std::vector<TokenId> full(static_cast<std::size_t>(T));
    std::iota(full.begin(), full.end(), 0);
    const SupportSolution dense = solve_support(q_hat, E, f, full, B);

    // Screening pool: top coordinates of the dense ball-constrained
    // relaxation by coefficient magnitude (index breaks ties).
    std::vector<TokenId> pool;
    {
      std::vector<TokenId> order = full;
      std::sort(order.begin(), order.end(), [&](TokenId a, TokenId b) {
        const double ma = std::abs(dense.coeffs[a]);
        const double mb = std::abs(dense.coeffs[b]);
        if (ma != mb) return ma > mb;
        return a < b;
      });
      const std::int32_t pool_size =
          std::min<std::int32_t>(T, std::max<std::int32_t>(kGreedyPoolSize, s));
      pool.assign(order.begin(), order.begin() + pool_size);
      std::sort(pool.begin(), pool.end());
    }

    // Enumerate pool subsets level by level while the budget lasts.
    std::int64_t budget_used = 0;
    const std::int32_t max_level =
        std::min<std::int32_t>(s, static_cast<std::int32_t>(pool.size()));
    for (std::int32_t size = 2; size <= max_level; ++size) {
      const double level_cost =
          binomial_coefficient(static_cast<std::int32_t>(pool.size()), size);
      if (static_cast<double>(budget_used) + level_cost >
          static_cast<double>(kGreedyEnumBudget))
        break;
      budget_used += static_cast<std::int64_t>(level_cost);
      std::vector<std::int32_t> pick(static_cast<std::size_t>(size));
      std::iota(pick.begin(), pick.end(), 0);
      while (true) {
        std::vector<TokenId> support;
        support.reserve(static_cast<std::size_t>(size));
        for (std::int32_t i : pick)
          support.push_back(pool[static_cast<std::size_t>(i)]);
        memo.solve(support);
        std::int32_t j = size - 1;
        while (j >= 0 &&
               pick[static_cast<std::size_t>(j)] ==
                   static_cast<std::int32_t>(pool.size()) - size + j)
          --j;
        if (j < 0) break;
        ++pick[static_cast<std::size_t>(j)];
        for (std::int32_t i = j + 1; i < size; ++i)
          pick[static_cast<std::size_t>(i)] = pick[static_cast<std::size_t>(i - 1)] + 1;
      }
    }

    // Feature-space beam search.  Distributions depend on alpha only through
    // z = E^T alpha, so the dense solution's z is a reliable target while its
    // per-coordinate magnitudes are not: score each support by the least
    // squares fit of its atoms to z, keep a wide beam per level, and refit
    // the best leaves exactly.
    {
      const Eigen::VectorXd z = E.entries().transpose() * dense.coeffs;
      using Node = std::pair<double, std::vector<TokenId>>;
      auto ls_residual = [&](const std::vector<TokenId>& support) {
        Eigen::MatrixXd A(E.dim(), static_cast<Eigen::Index>(support.size()));
        for (std::size_t j = 0; j < support.size(); ++j)
          A.col(static_cast<Eigen::Index>(j)) =
              E.entries().row(support[j]).transpose();
        const Eigen::VectorXd c = A.colPivHouseholderQr().solve(z);
        return (z - A * c).squaredNorm();
      };
      std::vector<Node> beam;
      for (TokenId v = 0; v < T; ++v)
        beam.push_back({ls_residual({v}), {v}});
      std::sort(beam.begin(), beam.end());
      if (beam.size() > static_cast<std::size_t>(kScreenBeamWidth))
        beam.resize(static_cast<std::size_t>(kScreenBeamWidth));
      for (std::int32_t size = 2; size <= s; ++size) {
        std::map<std::vector<TokenId>, double> level;
        for (const Node& node : beam) {
          for (TokenId v = 0; v < T; ++v) {
            if (std::binary_search(node.second.begin(), node.second.end(), v))
              continue;
            std::vector<TokenId> grown = insert_sorted(node.second, v);
            if (level.find(grown) != level.end()) continue;
            level.emplace(std::move(grown), 0.0);
          }
        }
        beam.clear();
        for (auto& [support, score] : level) {
          score = ls_residual(support);
          beam.push_back({score, support});
        }
        std::sort(beam.begin(), beam.end());
        if (beam.size() > static_cast<std::size_t>(kScreenBeamWidth))
          beam.resize(static_cast<std::size_t>(kScreenBeamWidth));
      }
      const std::size_t refit =
          std::min<std::size_t>(beam.size(),
                                static_cast<std::size_t>(kScreenRefitCount));
      for (std::size_t i = 0; i < refit; ++i) memo.solve(beam[i].second);
    }

    // Multi-start forward selection over the full vocabulary: extend the best
    // supports of each size by one token, wherever they came from.
    for (std::int32_t size = 1; size < s; ++size) {
      const std::vector<std::vector<TokenId>> seeds =
          memo.top_of_size(static_cast<std::size_t>(size), kGreedySeedCount);
      for (const std::vector<TokenId>& seed : seeds) {
        for (TokenId v = 0; v < T; ++v) {
          if (std::binary_search(seed.begin(), seed.end(), v)) continue;
          memo.solve(insert_sorted(seed, v));
        }
      }
    }

    // Swap refinement from the leader: replace one coordinate at a time with
    // any vocabulary token as long as the ranking improves.
    std::vector<TokenId> current = memo.best().support;
    for (std::int32_t sweep = 0; sweep < kMaxSwapSweeps; ++sweep) {
      bool improved = false;
      for (std::size_t pos = 0; pos < current.size(); ++pos) {
        SupportSolution best_here = memo.solve(current);
        std::vector<TokenId> best_support = current;
        for (TokenId v = 0; v < T; ++v) {
          if (std::binary_search(current.begin(), current.end(), v)) continue;
          std::vector<TokenId> swapped = current;
          swapped.erase(swapped.begin() + static_cast<std::ptrdiff_t>(pos));
          swapped = insert_sorted(std::move(swapped), v);
          const SupportSolution& sol = memo.solve(swapped);
          if (better_than(sol, best_here)) {
            best_here = sol;
            best_support = swapped;
          }
        }
        if (best_support != current) {
          current = best_support;
          improved = true;
        }
      }
      if (!improved) break;
    }
  }

  return fit_from(memo.best(), FitMethod::kGreedyPg);
}

// ---------------------------------------------------------------------------
// Risk.

RiskReport evaluate_risk(const std::vector<SparseFit>& fits,
                         const GroundTruth& truth, const EmbeddingMatrix& E,
                         const LinkFunction& f) {
  if (fits.size() != truth.q_star.size())
    throw std::invalid_argument("evaluate_risk: fits do not cover all new tokens");
  RiskReport report;
  report.per_token.reserve(fits.size());
  report.max_risk = 0.0;
  for (std::size_t u = 0; u < fits.size(); ++u) {
    const double risk = floored_objective(truth.q_star[u], E, f, fits[u].alpha_hat);
    report.per_token.push_back(risk);
    report.max_risk = std::max(report.max_risk, risk);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Embedding tuning.

TuneResult tune_embedding(const ProbVector& q_hat, const EmbeddingMatrix& E,
                          const LinkFunction& f, const Eigen::VectorXd& init,
                          std::int32_t steps, const TuneSchedule& schedule) {
  if (init.size() != E.dim())
    throw std::invalid_argument("tune_embedding: init has wrong dimension");
  if (!init.allFinite())
    throw std::invalid_argument("tune_embedding: init must be finite");
  if (steps < 0) throw std::invalid_argument("tune_embedding: steps must be >= 0");
  if (q_hat.size() != E.vocab())
    throw std::invalid_argument("tune_embedding: q_hat/embedding size mismatch");

  double lr0 = schedule.initial_lr;
  if (lr0 <= 0.0) {
    const double sigma = E.max_singular_value();
    if (sigma <= 0.0)
      throw std::domain_error("tune_embedding: embedding has zero spectrum");
    // The smooth objective's curvature is bounded by sigma^2 / (4 tau^2).
    lr0 = 4.0 * f.temperature * f.temperature / (sigma * sigma);
  }

  const Eigen::MatrixXd& X = E.entries();
  TuneResult result;
  Eigen::VectorXd e = init;
  double value = smooth_kl_value(q_hat, X, f.temperature, e);
  // A run is diverging when the objective sits an order of magnitude above
  // its starting level (or is non-finite) for a sustained window; plateaus at
  // or below the start are convergence, not divergence.
  const double ceiling = 10.0 * std::max(value, 0.0) + 10.0;
  std::int32_t stalled = 0;

  for (std::int32_t t = 0; t < steps; ++t) {
    const Eigen::VectorXd grad = smooth_kl_gradient(q_hat, X, f.temperature, e);
    const double lr = lr0 / (1.0 + schedule.decay * t);
    const Eigen::VectorXd next = e - lr * grad;
    const double next_value = smooth_kl_value(q_hat, X, f.temperature, next);
    if (!(next_value <= ceiling) || !std::isfinite(next_value)) {
      if (++stalled >= kDivergenceWindow) {
        std::ostringstream msg;
        msg << "tune_embedding: objective diverged, staying above "
            << format_double(ceiling) << " for " << kDivergenceWindow
            << " consecutive steps (step " << t
            << ", objective " << format_double(next_value)
            << ", lr " << format_double(lr) << "); lower the learning rate";
        throw std::runtime_error(msg.str());
      }
    } else {
      stalled = 0;
    }
    e = next;
    value = next_value;
    result.steps_run = t + 1;
  }

  result.embedding = std::move(e);
  result.smooth_kl = value;
  try {
    result.final_kl = kl_divergence(
        q_hat, link_from_embedding(f, E, result.embedding));
  } catch (const std::domain_error&) {
    result.final_kl = std::numeric_limits<double>::infinity();
  }
  return result;
}

// ---------------------------------------------------------------------------
// Serialization.

std::string to_string(FitMethod method) {
  switch (method) {
    case FitMethod::kEnumeration:
      return "enumeration";
    case FitMethod::kGreedyPg:
      return "greedy_pg";
  }
  throw std::invalid_argument("unknown fit method");
}

FitMethod fit_method_from_string(const std::string& name) {
  if (name == "enumeration") return FitMethod::kEnumeration;
  if (name == "greedy_pg") return FitMethod::kGreedyPg;
  throw std::invalid_argument("unknown fit method: " + name);
}

namespace {

std::string format_coeff(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.15g", v);
  return buf;
}

}  // namespace

void write_sparse_fit(std::ostream& os, std::int32_t token,
                      const SparseFit& fit) {
  os << "token=" << token << " method=" << to_string(fit.method) << " support=";
  for (std::size_t i = 0; i < fit.alpha_hat.size(); ++i) {
    if (i > 0) os << ",";
    os << fit.alpha_hat[i].index;
  }
  os << " coeffs=";
  for (std::size_t i = 0; i < fit.alpha_hat.size(); ++i) {
    if (i > 0) os << ",";
    os << format_coeff(fit.alpha_hat[i].value);
  }
  os << " objective=" << format_double(fit.objective_value)
     << " converged=" << (fit.converged ? 1 : 0) << "\n";
}

namespace {

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(text);
  while (std::getline(is, item, sep)) out.push_back(item);
  return out;
}

std::string field_value(const std::string& token, const std::string& key) {
  const std::string prefix = key + "=";
  if (token.rfind(prefix, 0) != 0)
    throw std::runtime_error("sparse-fit record: expected field " + key +
                             ", got: " + token);
  return token.substr(prefix.size());
}

}  // namespace

std::vector<std::pair<std::int32_t, SparseFit>> read_sparse_fits(
    std::istream& is) {
  std::vector<std::pair<std::int32_t, SparseFit>> records;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> fields = split(line, ' ');
    if (fields.size() != 6)
      throw std::runtime_error("sparse-fit record: expected 6 fields: " + line);

    SparseFit fit;
    const std::int32_t token = std::stoi(field_value(fields[0], "token"));
    fit.method = fit_method_from_string(field_value(fields[1], "method"));
    const std::string support_text = field_value(fields[2], "support");
    const std::string coeff_text = field_value(fields[3], "coeffs");
    const std::vector<std::string> support =
        support_text.empty() ? std::vector<std::string>{} : split(support_text, ',');
    const std::vector<std::string> coeffs =
        coeff_text.empty() ? std::vector<std::string>{} : split(coeff_text, ',');
    if (support.size() != coeffs.size())
      throw std::runtime_error("sparse-fit record: support/coeffs mismatch: " + line);
    for (std::size_t i = 0; i < support.size(); ++i)
      fit.alpha_hat.push_back(
          {static_cast<TokenId>(std::stoi(support[i])), std::stod(coeffs[i])});
    fit.objective_value = std::stod(field_value(fields[4], "objective"));
    fit.converged = field_value(fields[5], "converged") == "1";
    records.emplace_back(token, fit);
  }
  return records;
}

}  // namespace vexp
