#pragma once

/**
 * Core Markov-chain types: validated probability rows, row-stochastic
 * transition matrices whose columns always index the original vocabulary,
 * KL divergence with the 0 log 0 = 0 and p log(p/0) = +inf conventions,
 * pairwise separation margins, state-space expansion that appends rows for
 * new tokens without touching existing ones, and walk simulation.
 *
 * Expansion never modifies the original rows: the expanded matrix stores
 * bit-identical copies, so the original process is preserved exactly.
 */

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <vector>

#include "vocab_expand/rng.hpp"

namespace vexp {

using TokenId = std::int32_t;

// Probability vector over the vocabulary: entrywise >= 0, sums to 1 within
// kSumTolerance.  Construction validates; entries are immutable afterwards.
class ProbVector {
 public:
  static constexpr double kSumTolerance = 1e-12;

  ProbVector() = default;
  explicit ProbVector(std::vector<double> entries);

  std::int32_t size() const { return static_cast<std::int32_t>(entries_.size()); }
  double operator[](std::int32_t i) const { return entries_[static_cast<std::size_t>(i)]; }
  const std::vector<double>& entries() const { return entries_; }

  // Indices with nonzero mass, ascending.
  std::vector<TokenId> support() const;

 private:
  std::vector<double> entries_;
};

// Row-stochastic matrix: source_count() rows over target_count() columns.
// A freshly built chain is square; expansion appends rows for new tokens,
// so source_count() - target_count() gives the new-token count m.  Rows at
// indexes >= target_count() place mass only on original-vocabulary columns
// by construction, which is what makes catastrophic forgetting impossible.
class TransitionMatrix {
 public:
  TransitionMatrix() = default;
  TransitionMatrix(std::vector<ProbVector> rows, std::int32_t target_count);

  static TransitionMatrix from_rows(std::vector<ProbVector> rows);

  std::int32_t source_count() const { return static_cast<std::int32_t>(rows_.size()); }
  std::int32_t target_count() const { return target_count_; }
  std::int32_t new_count() const { return source_count() - target_count_; }

  const ProbVector& row(std::int32_t v) const;
  const std::vector<ProbVector>& rows() const { return rows_; }

 private:
  std::vector<ProbVector> rows_;
  std::int32_t target_count_ = 0;
};

// Minimum pairwise KL divergence over ordered row pairs.  Pairs with
// infinite divergence are skipped; when every ordered pair is infinite the
// margin is undefined and `finite` is false (gamma is then +inf, arg_i and
// arg_j are -1).  Ties resolve to the lexicographically smallest (i, j).
struct MarginReport {
  double gamma = std::numeric_limits<double>::infinity();
  std::int32_t arg_i = -1;
  std::int32_t arg_j = -1;
  bool finite = false;
};

// KL(p || q) with 0 log 0 = 0; returns +inf when p places mass where q has
// none.  Throws std::invalid_argument on dimension mismatch.
double kl_divergence(const ProbVector& p, const ProbVector& q);

// Dense-array variant used by the estimators' hot paths; same conventions.
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

// Margin over all ordered row pairs of P.  Throws std::domain_error when P
// has fewer than 2 rows.
MarginReport separation_margin(const TransitionMatrix& P);

// Returns a matrix whose first source_count() rows are exact copies of P's
// rows and whose appended rows are the given new-token rows.  Each new row
// must have length target_count() and pass ProbVector validation.
TransitionMatrix expand_state_space(const TransitionMatrix& P,
                                    const std::vector<ProbVector>& new_rows);

// Random walk of `length` tokens, first token = start, each successive
// token drawn from the row of its predecessor.  `start` may be a new-token
// row index; successors always lie in the original vocabulary.
std::vector<TokenId> simulate_walk(const TransitionMatrix& P, TokenId start,
                                   std::int64_t length, Rng& rng);

// Plain-text serialization: header "T=<target> m=<new>" then one row per
// line with enough digits for exact double round-trip.
void write_transition_matrix(std::ostream& os, const TransitionMatrix& P);
TransitionMatrix read_transition_matrix(std::istream& is);

// Formats a double with 17 significant digits (exact round-trip).
std::string format_double(double v);

}  // namespace vexp
