#pragma once

/**
 * Synthetic chain generation: token embeddings arranged in clusters, a
 * softmax link with temperature and a probability floor, sparse
 * ground-truth coefficients for new tokens, and the rejection loop that
 * enforces a minimum separation margin.
 *
 * The link maps an embedding-space point e to a distribution by taking
 * softmax(E e / temperature) and then repeatedly zeroing entries below
 * floor_c and renormalizing the survivors until a fixed point; renormalizing
 * never shrinks survivors, so the loop terminates in at most T passes.
 * A new token's row is the link applied to E^T alpha for its sparse
 * coefficient vector alpha, so the readout is determined by E alone.
 */

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "vocab_expand/chain.hpp"
#include "vocab_expand/rng.hpp"

namespace vexp {

// Token embeddings, one row per vocabulary token, with the largest singular
// value cached at construction.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  explicit EmbeddingMatrix(Eigen::MatrixXd entries);

  std::int32_t vocab() const { return static_cast<std::int32_t>(entries_.rows()); }
  std::int32_t dim() const { return static_cast<std::int32_t>(entries_.cols()); }
  const Eigen::MatrixXd& entries() const { return entries_; }
  double max_singular_value() const { return max_singular_value_; }

 private:
  Eigen::MatrixXd entries_;
  double max_singular_value_ = 0.0;
};

struct LinkFunction {
  double temperature = 1.0;
  double floor_c = 1e-3;
};

struct SparseEntry {
  TokenId index = 0;
  double value = 0.0;
};
using SparseVec = std::vector<SparseEntry>;  // sorted by index, unique

// Ground truth for the new tokens: sparse coefficients and the rows they
// induce through the link.
struct GroundTruth {
  std::vector<SparseVec> alpha_star;
  std::int32_t sparsity_s = 1;
  double norm_bound_B = 3.0;
  std::vector<ProbVector> q_star;

  // Index of the single nonzero coefficient (one-to-one truths only).
  TokenId v_star(std::int32_t u) const;
};

struct ChainSpec {
  std::int32_t T = 50;
  std::int32_t d = 16;
  std::int32_t m = 5;
  std::int32_t s = 1;
  std::int32_t cluster_count = 5;
  double floor_c = 1e-3;
  double temperature = 1.0;
  double min_gamma = 0.0;
  double norm_bound_B = 3.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticChain {
  EmbeddingMatrix embedding;
  LinkFunction link;
  TransitionMatrix matrix;
  GroundTruth truth;
  MarginReport margin;
  std::vector<std::int32_t> cluster_of;
  std::int32_t rejected_attempts = 0;
};

// Applies the floor: zero entries below c, renormalize, repeat to fixed
// point.  Throws std::domain_error when everything is floored away.
std::vector<double> floor_distribution(std::vector<double> probs, double c);

// softmax(E e / temperature) before flooring (the smooth part of the link).
std::vector<double> raw_softmax(const LinkFunction& f, const EmbeddingMatrix& E,
                                const Eigen::VectorXd& e);

// Full link: floored softmax of the embedding-space point e.
ProbVector link_from_embedding(const LinkFunction& f, const EmbeddingMatrix& E,
                               const Eigen::VectorXd& e);

// Full link applied to the sparse coefficient vector alpha: f(E^T alpha).
ProbVector apply_link(const LinkFunction& f, const EmbeddingMatrix& E,
                      const SparseVec& alpha);

// Dense embedding-space point E^T alpha for a sparse alpha.
Eigen::VectorXd embed_sparse(const EmbeddingMatrix& E, const SparseVec& alpha);

// Builds a chain satisfying spec.min_gamma by rejection, retrying with
// fresh draws up to kMaxAttempts; margins must also be well defined (at
// least one finite ordered pair) and strictly positive.  Deterministic for
// a given rng state.  Ground-truth coefficients are s-sparse with uniform
// random support, values uniform in [0.5, 1.5], rescaled onto the norm
// ball of radius min(B, drawn norm).
SyntheticChain build_chain(const ChainSpec& spec, Rng& rng);

// Convenience overload seeding its own stream from spec.seed.
SyntheticChain build_chain(const ChainSpec& spec);

inline constexpr std::int32_t kMaxChainAttempts = 1000;

// One-to-one ground truth: each new token copies the row of a uniformly
// drawn original token (coefficient vector = one-hot at that token).
GroundTruth one_to_one_truth(const TransitionMatrix& P, std::int32_t m, Rng& rng);

// Empirical Lipschitz estimate of the smooth link by finite differences
// over random points and directions: max ||f(x+h u) - f(x)||_1 / h.
double estimate_lipschitz(const LinkFunction& f, const EmbeddingMatrix& E,
                          Rng& rng, std::int32_t samples = 64);

// Chain container: transition matrix followed by an optional
// "[ground_truth]" section of "u index:coeff,..." lines.
void write_chain(std::ostream& os, const TransitionMatrix& P,
                 const GroundTruth* truth = nullptr);

struct ChainFile {
  TransitionMatrix matrix;
  std::optional<GroundTruth> truth;
};
ChainFile read_chain(std::istream& is);

}  // namespace vexp
