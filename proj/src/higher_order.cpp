#include "vocab_expand/higher_order.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace vexp {

namespace {

void check_window_shape(const Window& w, std::int32_t T, bool final_may_be_new) {
  if (w.empty()) throw std::invalid_argument("window must have K >= 1 slots");
  bool seen_token = false;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const TokenId tok = w[i];
    const bool final_slot = (i + 1 == w.size());
    if (tok == kNullToken) {
      if (seen_token)
        throw std::invalid_argument("NULL slots must form a contiguous prefix");
      continue;
    }
    seen_token = true;
    if (tok < 0 || (tok >= T && !(final_may_be_new && final_slot)))
      throw std::out_of_range("window token outside vocabulary");
  }
}

void check_encoding_capacity(std::int32_t K, std::int32_t T) {
  // Codes live in base (T+1) with K digits; require they fit in int64.
  if (static_cast<double>(K) * std::log2(static_cast<double>(T) + 1.0) >= 62.0)
    throw std::length_error("window encoding exceeds 64-bit capacity");
}

}  // namespace

std::int64_t encode_window(const Window& w, std::int32_t T) {
  check_window_shape(w, T, /*final_may_be_new=*/false);
  check_encoding_capacity(static_cast<std::int32_t>(w.size()), T);
  std::int64_t code = 0;
  for (TokenId tok : w)
    code = code * (static_cast<std::int64_t>(T) + 1) +
           (tok == kNullToken ? 0 : static_cast<std::int64_t>(tok) + 1);
  return code;
}

Window decode_window(std::int64_t code, std::int32_t K, std::int32_t T) {
  if (code < 0) throw std::out_of_range("negative window code");
  check_encoding_capacity(K, T);
  Window w(static_cast<std::size_t>(K), kNullToken);
  for (std::int32_t i = K - 1; i >= 0; --i) {
    const std::int64_t digit = code % (static_cast<std::int64_t>(T) + 1);
    w[static_cast<std::size_t>(i)] =
        digit == 0 ? kNullToken : static_cast<TokenId>(digit - 1);
    code /= static_cast<std::int64_t>(T) + 1;
  }
  if (code != 0) throw std::out_of_range("window code out of range for (K, T)");
  check_window_shape(w, T, /*final_may_be_new=*/false);
  return w;
}

Window shift_window(const Window& w, TokenId v) {
  Window out(w.begin() + 1, w.end());
  out.push_back(v);
  return out;
}

KOrderModel::KOrderModel(std::int32_t order_K, std::int32_t vocab_T,
                         std::int32_t branching_b)
    : K_(order_K), T_(vocab_T), b_(branching_b) {
  if (order_K < 1) throw std::invalid_argument("KOrderModel: order must be >= 1");
  if (vocab_T < 1) throw std::invalid_argument("KOrderModel: vocabulary must be >= 1");
  if (branching_b < 1)
    throw std::invalid_argument("KOrderModel: branching must be >= 1");
  check_encoding_capacity(order_K, vocab_T);
}

void KOrderModel::set_row(const Window& w, ProbVector row) {
  if (static_cast<std::int32_t>(w.size()) != K_)
    throw std::invalid_argument("KOrderModel: window has wrong length");
  if (row.size() != T_)
    throw std::invalid_argument("KOrderModel: row has wrong length");
  if (static_cast<std::int32_t>(row.support().size()) > b_)
    throw std::invalid_argument("KOrderModel: row support exceeds branching factor");
  rows_[encode_window(w, T_)] = std::move(row);
}

const ProbVector* KOrderModel::row(const Window& w) const {
  const auto it = rows_.find(encode_window(w, T_));
  return it == rows_.end() ? nullptr : &it->second;
}

KOrderModel random_k_order_model(std::int32_t T, std::int32_t K,
                                 std::int32_t b, Rng& rng) {
  KOrderModel model(K, T, std::min(b, T));
  const std::int32_t eff_b = std::min(b, T);

  // One plausible-successor set per token; every window draws its support
  // from the set of its last token, which keeps reachable windows on paths
  // of a degree-eff_b digraph.
  std::vector<std::vector<TokenId>> succ(static_cast<std::size_t>(T));
  {
    std::vector<TokenId> pool(static_cast<std::size_t>(T));
    for (std::int32_t i = 0; i < T; ++i) pool[static_cast<std::size_t>(i)] = i;
    for (std::int32_t t = 0; t < T; ++t) {
      for (std::int32_t i = 0; i < eff_b; ++i) {
        const std::int64_t j = i + uniform_int(rng, T - i);
        std::swap(pool[static_cast<std::size_t>(i)],
                  pool[static_cast<std::size_t>(j)]);
      }
      succ[static_cast<std::size_t>(t)].assign(pool.begin(), pool.begin() + eff_b);
    }
  }

  std::deque<Window> queue;
  queue.push_back(Window(static_cast<std::size_t>(K), kNullToken));
  while (!queue.empty()) {
    const Window w = queue.front();
    queue.pop_front();
    if (model.row(w) != nullptr) continue;
    if (model.row_count() >= kReachableBudget)
      throw std::length_error("random_k_order_model: reachable budget exceeded");

    const bool padding = std::find(w.begin(), w.end(), kNullToken) != w.end();
    const TokenId last = w.back();
    std::vector<double> row(static_cast<std::size_t>(T), 0.0);
    if (padding) {
      const TokenId target =
          last == kNullToken
              ? static_cast<TokenId>(uniform_int(rng, T))
              : succ[static_cast<std::size_t>(last)]
                    [static_cast<std::size_t>(uniform_int(rng, eff_b))];
      row[static_cast<std::size_t>(target)] = 1.0;
    } else {
      double total = 0.0;
      for (const TokenId v : succ[static_cast<std::size_t>(last)]) {
        const double weight = 0.1 + uniform_double(rng);
        row[static_cast<std::size_t>(v)] = weight;
        total += weight;
      }
      for (double& p : row) p /= total;
    }
    ProbVector prob(std::move(row));
    for (TokenId v : prob.support()) {
      const Window next = shift_window(w, v);
      if (model.row(next) == nullptr) queue.push_back(next);
    }
    model.set_row(w, std::move(prob));
  }
  return model;
}

LiftedChain lift_to_first_order(const KOrderModel& M) {
  const std::int32_t T = M.vocab();
  const std::int32_t K = M.order();

  std::map<std::int64_t, std::int32_t> index_of;
  std::vector<Window> states;
  std::deque<std::int32_t> queue;

  const Window start(static_cast<std::size_t>(K), kNullToken);
  index_of[encode_window(start, T)] = 0;
  states.push_back(start);
  queue.push_back(0);

  // Discovery pass: assign indexes in breadth-first order.
  for (std::size_t head = 0; head < states.size(); ++head) {
    const Window w = states[head];
    const ProbVector* row = M.row(w);
    if (row == nullptr) {
      std::ostringstream msg;
      msg << "lift_to_first_order: reachable window has no conditional row (code "
          << encode_window(w, T) << ")";
      throw std::out_of_range(msg.str());
    }
    for (TokenId v : row->support()) {
      const Window next = shift_window(w, v);
      const std::int64_t code = encode_window(next, T);
      if (index_of.emplace(code, static_cast<std::int32_t>(states.size())).second) {
        if (static_cast<std::int64_t>(states.size()) >= kReachableBudget) {
          std::ostringstream msg;
          msg << "lift_to_first_order: more than " << kReachableBudget
              << " reachable augmented states (branching estimate T*b^(K-1)+K = "
              << static_cast<double>(T) *
                         std::pow(static_cast<double>(M.branching()), K - 1) +
                     K
              << ")";
          throw std::length_error(msg.str());
        }
        states.push_back(next);
      }
    }
  }

  const auto n = static_cast<std::int32_t>(states.size());
  std::vector<ProbVector> rows;
  rows.reserve(states.size());
  for (const Window& w : states) {
    const ProbVector& row = *M.row(w);
    std::vector<double> lifted(static_cast<std::size_t>(n), 0.0);
    for (TokenId v : row.support())
      lifted[static_cast<std::size_t>(index_of.at(encode_window(shift_window(w, v), T)))] =
          row[v];
    rows.push_back(ProbVector(std::move(lifted)));
  }

  LiftedChain L;
  L.matrix = TransitionMatrix::from_rows(std::move(rows));
  L.states = std::move(states);
  L.order_K = K;
  L.vocab_T = T;
  return L;
}

LiftedChain expand_augmented(const LiftedChain& L,
                             const std::vector<Window>& new_contexts,
                             const std::vector<ProbVector>& new_rows) {
  if (new_contexts.size() != new_rows.size())
    throw std::invalid_argument("expand_augmented: contexts/rows size mismatch");
  for (const Window& w : new_contexts) {
    if (static_cast<std::int32_t>(w.size()) != L.order_K)
      throw std::invalid_argument("expand_augmented: context has wrong length");
    check_window_shape(w, L.vocab_T, /*final_may_be_new=*/true);
    if (w.back() < L.vocab_T)
      throw std::invalid_argument(
          "expand_augmented: context must end in a new token");
  }

  LiftedChain out;
  out.matrix = expand_state_space(L.matrix, new_rows);
  out.states = L.states;
  out.states.insert(out.states.end(), new_contexts.begin(), new_contexts.end());
  out.order_K = L.order_K;
  out.vocab_T = L.vocab_T;
  return out;
}

namespace {

void check_table_budget(std::int32_t T, std::int32_t length) {
  if (length < 1)
    throw std::invalid_argument("sequence table: length must be >= 1");
  if (std::pow(static_cast<double>(T), static_cast<double>(length)) > kTableBudget)
    throw std::length_error("sequence table: T^length exceeds budget");
}

}  // namespace

SequenceTable sequence_distribution(const KOrderModel& M, std::int32_t length) {
  const std::int32_t T = M.vocab();
  check_table_budget(T, length);
  const auto table_size = static_cast<std::size_t>(
      std::llround(std::pow(static_cast<double>(T), static_cast<double>(length))));

  SequenceTable table;
  table.vocab_T = T;
  table.length = length;
  table.direct.assign(table_size, 0.0);

  // Direct law: walk the window forward, multiplying conditionals.
  const Window start(static_cast<std::size_t>(M.order()), kNullToken);
  struct Frame {
    Window window;
    double prob;
    std::size_t index;
    std::int32_t depth;
  };
  std::vector<Frame> stack;
  stack.push_back({start, 1.0, 0, 0});
  while (!stack.empty()) {
    Frame frame = std::move(stack.back());
    stack.pop_back();
    if (frame.depth == length) {
      table.direct[frame.index] += frame.prob;
      continue;
    }
    const ProbVector* row = M.row(frame.window);
    if (row == nullptr)
      throw std::out_of_range("sequence_distribution: missing conditional row");
    for (TokenId v : row->support())
      stack.push_back({shift_window(frame.window, v), frame.prob * (*row)[v],
                       frame.index * static_cast<std::size_t>(T) +
                           static_cast<std::size_t>(v),
                       frame.depth + 1});
  }

  table.lifted = lifted_sequence_table(lift_to_first_order(M), length);
  return table;
}

std::vector<double> lifted_sequence_table(const LiftedChain& L,
                                          std::int32_t length) {
  const std::int32_t T = L.vocab_T;
  check_table_budget(T, length);
  const auto table_size = static_cast<std::size_t>(
      std::llround(std::pow(static_cast<double>(T), static_cast<double>(length))));
  std::vector<double> table(table_size, 0.0);

  struct Frame {
    std::int32_t state;
    double prob;
    std::size_t index;
    std::int32_t depth;
  };
  std::vector<Frame> stack;
  stack.push_back({0, 1.0, 0, 0});
  while (!stack.empty()) {
    Frame frame = stack.back();
    stack.pop_back();
    if (frame.depth == length) {
      table[frame.index] += frame.prob;
      continue;
    }
    const ProbVector& row = L.matrix.row(frame.state);
    for (TokenId next : row.support()) {
      const TokenId emitted = L.states[static_cast<std::size_t>(next)].back();
      stack.push_back({next, frame.prob * row[next],
                       frame.index * static_cast<std::size_t>(T) +
                           static_cast<std::size_t>(emitted),
                       frame.depth + 1});
    }
  }
  return table;
}

double total_variation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("total_variation: size mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(a[i] - b[i]);
  return 0.5 * sum;
}

void write_lifted_chain(std::ostream& os, const LiftedChain& L) {
  os << "K=" << L.order_K << " vocab=" << L.vocab_T << "\n";
  write_transition_matrix(os, L.matrix);
  os << "[states]\n";
  for (std::size_t i = 0; i < L.states.size(); ++i) {
    os << i;
    for (TokenId tok : L.states[i]) os << " " << tok;
    os << "\n";
  }
}

LiftedChain read_lifted_chain(std::istream& is) {
  std::string line;
  if (!std::getline(is, line))
    throw std::runtime_error("read_lifted_chain: missing header");
  LiftedChain L;
  if (std::sscanf(line.c_str(), "K=%d vocab=%d", &L.order_K, &L.vocab_T) != 2)
    throw std::runtime_error("read_lifted_chain: bad header: " + line);

  L.matrix = read_transition_matrix(is);

  if (!std::getline(is, line) || line != "[states]")
    throw std::runtime_error("read_lifted_chain: expected [states] section");
  L.states.reserve(static_cast<std::size_t>(L.matrix.source_count()));
  for (std::int32_t i = 0; i < L.matrix.source_count(); ++i) {
    if (!std::getline(is, line))
      throw std::runtime_error("read_lifted_chain: missing state line");
    std::istringstream ls(line);
    std::int64_t id = -1;
    ls >> id;
    if (!ls || id != i)
      throw std::runtime_error("read_lifted_chain: bad state line: " + line);
    Window w;
    TokenId tok;
    while (ls >> tok) w.push_back(tok);
    if (static_cast<std::int32_t>(w.size()) != L.order_K)
      throw std::runtime_error("read_lifted_chain: state window has wrong length");
    L.states.push_back(std::move(w));
  }
  return L;
}

}  // namespace vexp
