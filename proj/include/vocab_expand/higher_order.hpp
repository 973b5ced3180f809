#pragma once

/**
 * Order-K processes and their reduction to first-order chains.
 *
 * A context window holds the last K tokens, left-padded with a NULL marker
 * for histories shorter than K; windows encode canonically as base-(T+1)
 * integers (NULL digit 0, token t digit t+1, oldest slot most significant,
 * so the all-NULL window encodes as 0).  A K-order model stores sparse
 * conditional rows keyed by that encoding, with per-row support capped by
 * a branching factor b.  Lifting enumerates the windows reachable from the
 * all-NULL start and produces an ordinary first-order transition matrix
 * over them, which can then be expanded with new-context rows exactly like
 * a first-order chain — pre-existing lifted rows are never touched.
 */

#include <cstdint>
#include <iosfwd>
#include <map>
#include <vector>

#include "vocab_expand/chain.hpp"
#include "vocab_expand/rng.hpp"

namespace vexp {

inline constexpr TokenId kNullToken = -1;

using Window = std::vector<TokenId>;

// Canonical encoding; throws unless NULL slots form a contiguous prefix and
// tokens lie in [0, T).
std::int64_t encode_window(const Window& w, std::int32_t T);
Window decode_window(std::int64_t code, std::int32_t K, std::int32_t T);

// Drops the oldest slot and appends v.
Window shift_window(const Window& w, TokenId v);

// Sparse K-order conditional model over vocabulary [0, T).
class KOrderModel {
 public:
  KOrderModel(std::int32_t order_K, std::int32_t vocab_T, std::int32_t branching_b);

  std::int32_t order() const { return K_; }
  std::int32_t vocab() const { return T_; }
  std::int32_t branching() const { return b_; }

  // Row must be a ProbVector over [0, T) with support size <= branching_b.
  void set_row(const Window& w, ProbVector row);
  // Null when no row is stored for this window.
  const ProbVector* row(const Window& w) const;

  std::int64_t row_count() const { return static_cast<std::int64_t>(rows_.size()); }
  const std::map<std::int64_t, ProbVector>& rows() const { return rows_; }

 private:
  std::int32_t K_ = 1;
  std::int32_t T_ = 0;
  std::int32_t b_ = 1;
  std::map<std::int64_t, ProbVector> rows_;
};

// Random branching-limited model covering exactly the states reachable from
// the all-NULL start. Each token draws one plausible-successor set of size b;
// every window's row is supported on the set of its last token (padding
// states, those still containing NULL, get one-hot rows inside that set), so
// reachable windows are paths in a degree-b digraph: at most T b^(K-1) + K.
KOrderModel random_k_order_model(std::int32_t T, std::int32_t K,
                                 std::int32_t b, Rng& rng);

// First-order chain over reachable windows.  states[i] is the window of
// state i in discovery order (all-NULL is state 0); matrix row i places
// M(w_i)[v] on the state holding shift(w_i, v).
struct LiftedChain {
  TransitionMatrix matrix;
  std::vector<Window> states;
  std::int32_t order_K = 1;
  std::int32_t vocab_T = 0;
};

inline constexpr std::int64_t kReachableBudget = 1000000;

// Breadth-first reachability from the all-NULL window.  Throws
// std::length_error past kReachableBudget states and std::out_of_range if
// a reachable window has no stored row.
LiftedChain lift_to_first_order(const KOrderModel& M);

// Appends rows for new-context states (windows whose final slot is a new
// token, i.e. >= vocab_T) to the lifted chain; existing rows are copied
// exactly.  Each appended row spans the pre-existing states.
LiftedChain expand_augmented(const LiftedChain& L,
                             const std::vector<Window>& new_contexts,
                             const std::vector<ProbVector>& new_rows);

// Exact probability of every token sequence in V^length, indexed base-T
// with the first token most significant.
inline constexpr double kTableBudget = 1e5;

struct SequenceTable {
  std::int32_t vocab_T = 0;
  std::int32_t length = 0;
  std::vector<double> direct;  // from the K-order law
  std::vector<double> lifted;  // from the lifted first-order chain
};

SequenceTable sequence_distribution(const KOrderModel& M, std::int32_t length);

// Enumeration over an already-lifted chain (walks start at state 0).
std::vector<double> lifted_sequence_table(const LiftedChain& L,
                                          std::int32_t length);

// (1/2) sum |a_i - b_i|; sizes must match.
double total_variation(const std::vector<double>& a, const std::vector<double>& b);

// Text format: "K=<int> vocab=<int>" line, the transition matrix in the
// first-order format, then "[states]" with one "state_id tok tok ..." line
// per state (NULL written as -1).
void write_lifted_chain(std::ostream& os, const LiftedChain& L);
LiftedChain read_lifted_chain(std::istream& is);

}  // namespace vexp
