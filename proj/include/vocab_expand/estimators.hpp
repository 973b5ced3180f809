#pragma once

/**
 * Learning procedures for new-token rows.
 *
 * identify_one_to_one picks, for each new token, the original token whose
 * row minimizes KL(q_hat || p^(v)) over the candidate set V' of rows that
 * cover q_hat's support; identify_one_to_one_nll is an independent route
 * that minimizes the summed negative log-likelihood of the observed
 * successors directly from the dataset.  The two argmins agree.
 *
 * fit_sparse_enumeration / fit_sparse_greedy estimate sparse coefficient
 * vectors alpha (at most s nonzeros, l2 norm at most B) so that the link
 * applied to E^T alpha matches q_hat.  Both evaluate candidate supports
 * with the same cold-started projected-gradient inner solver on the smooth
 * (pre-floor) objective and rank solutions by the floored objective, so
 * enumeration is an exact oracle and greedy can never beat it.  The greedy
 * method combines forward selection with pooled enumeration and a
 * feature-space screen, and finishes with swap-refinement sweeps, which
 * repairs most of the plain forward-selection failures.
 *
 * tune_embedding trains a single embedding vector by gradient descent
 * through the smooth softmax head, leaving E and P untouched.
 */

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "vocab_expand/chain.hpp"
#include "vocab_expand/sampler.hpp"
#include "vocab_expand/synth_model.hpp"

namespace vexp {

// ---------------------------------------------------------------------------
// One-to-one identification.

struct TokenIdentification {
  bool identified = false;  // false: zero-count token or empty candidate set
  TokenId v_hat = -1;
  double kl_to_best = std::numeric_limits<double>::infinity();
  std::int32_t candidate_set_size = 0;
  bool success = false;  // set only when ground truth is supplied
};

struct IdentificationResult {
  std::vector<TokenIdentification> per_token;

  std::int32_t success_count() const;
  bool all_succeeded() const;
};

// KL route: argmin over V' = {v : p^(v) covers supp(q_hat)} of
// KL(q_hat || p^(v)), lowest index on ties.  Tokens with no estimate or an
// empty V' come back identified = false.
IdentificationResult identify_one_to_one(const EmpiricalDistribution& stats,
                                         const TransitionMatrix& P,
                                         const GroundTruth* truth = nullptr);

// Likelihood route: argmin over v of sum_i -log p^(v)_{ID_i} where the
// ID_i are the observed successors of each new token, computed straight
// from the dataset (rows with infinite loss are excluded).
IdentificationResult identify_one_to_one_nll(const Dataset& D,
                                             const TransitionMatrix& P,
                                             const GroundTruth* truth = nullptr);

// ---------------------------------------------------------------------------
// Sparse coefficient estimation.

enum class FitMethod { kEnumeration, kGreedyPg };

std::string to_string(FitMethod method);
FitMethod fit_method_from_string(const std::string& name);

struct SparseFit {
  SparseVec alpha_hat;  // <= s nonzeros, l2 norm <= B
  double objective_value = std::numeric_limits<double>::infinity();
  FitMethod method = FitMethod::kEnumeration;
  bool converged = false;
};

// Smooth objective shared by the sparse solvers and embedding tuning:
// value(x) = KL(q_hat || softmax(X x / temperature)) as a function of x,
// with gradient X^T (softmax(X x / temperature) - q_hat) / temperature.
double smooth_kl_value(const ProbVector& q_hat, const Eigen::MatrixXd& X,
                       double temperature, const Eigen::VectorXd& x);
Eigen::VectorXd smooth_kl_gradient(const ProbVector& q_hat,
                                   const Eigen::MatrixXd& X,
                                   double temperature, const Eigen::VectorXd& x);

// Inner solver: projected gradient descent on the smooth objective over
// the l2 ball of radius B, coefficients restricted to `support`, cold
// start at 0, Armijo backtracking, at most kMaxInnerIterations steps or
// projected-gradient norm below kInnerTolerance.
struct SupportSolution {
  std::vector<TokenId> support;
  Eigen::VectorXd coeffs;      // aligned with support
  double smooth_value = std::numeric_limits<double>::infinity();
  double floored_kl = std::numeric_limits<double>::infinity();
  bool converged = false;
  std::int32_t iterations = 0;
};

inline constexpr std::int32_t kMaxInnerIterations = 500;
inline constexpr double kInnerTolerance = 1e-8;

SupportSolution solve_support(const ProbVector& q_hat, const EmbeddingMatrix& E,
                              const LinkFunction& f,
                              const std::vector<TokenId>& support, double B);

// Exact oracle: solves every support of size 1..s and returns the best by
// (floored objective, smooth objective, lexicographic support).  Throws
// std::length_error when C(T, s) exceeds kEnumerationBudget, pointing at
// the greedy method.
inline constexpr double kEnumerationBudget = 1e5;

SparseFit fit_sparse_enumeration(const ProbVector& q_hat,
                                 const EmbeddingMatrix& E,
                                 const LinkFunction& f, std::int32_t s,
                                 double B);

// Scalable method built from refit-scored forward selection.  Candidate
// supports come from four sources, all solved with the same inner refit and
// ranked exactly as in enumeration: (1) subsets of a screening pool (the top
// kGreedyPoolSize coordinates of a dense ball-constrained relaxation by
// magnitude), enumerated while the subset count stays within
// kGreedyEnumBudget; (2) a feature-space beam search — only z = E^T alpha is
// identifiable, so supports are scored by how well least squares on their
// atoms reproduces the dense solution's z, keeping kScreenBeamWidth nodes per
// level and refitting the kScreenRefitCount best leaves exactly; (3)
// multi-start forward selection over the full vocabulary, extending the
// kGreedySeedCount best supports of each size one token at a time; (4)
// swap-refinement sweeps from the leader.  The best support ever solved
// wins.  For T <= kGreedyPoolSize and small s the pool covers every support,
// so the method matches the oracle exactly.
inline constexpr std::int32_t kGreedyPoolSize = 18;
inline constexpr std::int64_t kGreedyEnumBudget = 2000;
inline constexpr std::int32_t kScreenBeamWidth = 64;
inline constexpr std::int32_t kScreenRefitCount = 64;
inline constexpr std::int32_t kGreedySeedCount = 4;
inline constexpr std::int32_t kMaxSwapSweeps = 10;

SparseFit fit_sparse_greedy(const ProbVector& q_hat, const EmbeddingMatrix& E,
                            const LinkFunction& f, std::int32_t s, double B);

// ---------------------------------------------------------------------------
// Risk evaluation.

struct RiskReport {
  std::vector<double> per_token;  // KL(q*_u || f(E^T alpha_hat_u))
  double max_risk = 0.0;
};

RiskReport evaluate_risk(const std::vector<SparseFit>& fits,
                         const GroundTruth& truth, const EmbeddingMatrix& E,
                         const LinkFunction& f);

// ---------------------------------------------------------------------------
// Embedding tuning.

struct TuneSchedule {
  double initial_lr = 0.0;  // 0: auto, 4 temperature^2 / sigma_max(E)^2
  double decay = 0.0;       // lr_t = initial / (1 + decay * t)
};

struct TuneResult {
  Eigen::VectorXd embedding;
  double final_kl = std::numeric_limits<double>::infinity();  // floored link
  double smooth_kl = std::numeric_limits<double>::infinity();
  std::int32_t steps_run = 0;
};

// Gradient descent on e -> KL(q_hat || softmax(E e / temperature)).  E is
// read-only; only the returned vector is learned.  Aborts with
// std::runtime_error when the objective stays an order of magnitude above
// its starting level (or non-finite) for kDivergenceWindow consecutive
// steps (diagnostics in the message).
inline constexpr std::int32_t kDivergenceWindow = 50;

TuneResult tune_embedding(const ProbVector& q_hat, const EmbeddingMatrix& E,
                          const LinkFunction& f, const Eigen::VectorXd& init,
                          std::int32_t steps, const TuneSchedule& schedule);

// ---------------------------------------------------------------------------
// Fit-record serialization (one record per line):
//   token=<int> method=<name> support=<i,j,...> coeffs=<c,c,...>
//   objective=<real> converged=<0|1>
// Coefficients carry 15 significant digits.

void write_sparse_fit(std::ostream& os, std::int32_t token,
                      const SparseFit& fit);
std::vector<std::pair<std::int32_t, SparseFit>> read_sparse_fits(
    std::istream& is);

}  // namespace vexp
