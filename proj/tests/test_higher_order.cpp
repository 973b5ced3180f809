#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <doctest.h>

#include "vocab_expand/higher_order.hpp"

using namespace vexp;

namespace {

// Fully specified K=2, T=2 model with hand-computable sequence law.
KOrderModel hand_model() {
  KOrderModel model(2, 2, 2);
  model.set_row({kNullToken, kNullToken}, ProbVector({0.6, 0.4}));
  model.set_row({kNullToken, 0}, ProbVector({0.3, 0.7}));
  model.set_row({kNullToken, 1}, ProbVector({0.9, 0.1}));
  model.set_row({0, 0}, ProbVector({0.5, 0.5}));
  model.set_row({0, 1}, ProbVector({0.2, 0.8}));
  model.set_row({1, 0}, ProbVector({1.0, 0.0}));
  model.set_row({1, 1}, ProbVector({0.25, 0.75}));
  return model;
}

}  // namespace

TEST_CASE("window codes are canonical and round-trip") {
  // Base T+1 = 3, oldest slot most significant, NULL digit 0.
  CHECK(encode_window({kNullToken, kNullToken}, 2) == 0);
  CHECK(encode_window({kNullToken, 0}, 2) == 1);
  CHECK(encode_window({kNullToken, 1}, 2) == 2);
  CHECK(encode_window({0, 0}, 2) == 4);
  CHECK(encode_window({1, 0}, 2) == 7);
  CHECK(encode_window({1, 1}, 2) == 8);

  for (std::int64_t code : {0, 1, 2, 4, 5, 7, 8})
    CHECK(encode_window(decode_window(code, 2, 2), 2) == code);

  // Codes with a NULL digit after a token digit are non-canonical.
  CHECK_THROWS_AS(decode_window(3, 2, 2), std::invalid_argument);
  CHECK_THROWS_AS(decode_window(6, 2, 2), std::invalid_argument);
  CHECK_THROWS_AS(decode_window(9, 2, 2), std::out_of_range);

  // NULL must form a contiguous prefix; tokens must lie inside [0, T).
  CHECK_THROWS_AS(encode_window({0, kNullToken}, 2), std::invalid_argument);
  CHECK_THROWS_AS(encode_window({0, 5}, 2), std::out_of_range);
}

TEST_CASE("window shifting drops the oldest slot") {
  CHECK(shift_window({kNullToken, kNullToken}, 1) == Window{kNullToken, 1});
  CHECK(shift_window({kNullToken, 1}, 0) == Window{1, 0});
  CHECK(shift_window({1, 0}, 1) == Window{0, 1});
}

TEST_CASE("hand-built model produces the enumerated sequence law") {
  const KOrderModel model = hand_model();
  const SequenceTable table = sequence_distribution(model, 3);
  CHECK(table.vocab_T == 2);
  CHECK(table.length == 3);
  REQUIRE(table.direct.size() == 8);

  // Hand products: P(t0,t1,t2) = p()(t0) p(t0)(t1) p(t0,t1)(t2).
  CHECK(table.direct[0b011] == doctest::Approx(0.336).epsilon(1e-15));
  CHECK(table.direct[0b100] == doctest::Approx(0.36).epsilon(1e-15));
  CHECK(table.direct[0b110] == doctest::Approx(0.01).epsilon(1e-15));

  double total = 0.0;
  for (std::size_t k = 0; k < table.direct.size(); ++k) {
    total += table.direct[k];
    CHECK(table.direct[k] == doctest::Approx(table.lifted[k]).epsilon(1e-14));
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(total_variation(table.direct, table.lifted) <= 1e-12);
}

TEST_CASE("lifting reaches exactly the expected windows") {
  const KOrderModel model = hand_model();
  const LiftedChain lifted = lift_to_first_order(model);
  CHECK(lifted.order_K == 2);
  CHECK(lifted.vocab_T == 2);
  // {(N,N),(N,0),(N,1),(0,0),(0,1),(1,0),(1,1)} = T b^(K-1) + K = 6 + 2... 7
  // here because the start row is full-support (b = 2 = T).
  CHECK(lifted.states.size() == 7);
  CHECK(lifted.states[0] == Window{kNullToken, kNullToken});

  std::set<std::int64_t> seen;
  for (const Window& w : lifted.states)
    CHECK(seen.insert(encode_window(w, 2)).second);

  // Row targets follow shift_window.
  for (std::size_t i = 0; i < lifted.states.size(); ++i) {
    const ProbVector* row = model.row(lifted.states[i]);
    REQUIRE(row != nullptr);
    for (TokenId v = 0; v < 2; ++v) {
      const std::int64_t target_code =
          encode_window(shift_window(lifted.states[i], v), 2);
      for (std::size_t j = 0; j < lifted.states.size(); ++j) {
        const double mass =
            lifted.matrix.row(static_cast<std::int32_t>(i))[static_cast<std::int32_t>(j)];
        if (encode_window(lifted.states[j], 2) == target_code)
          CHECK(mass == (*row)[v]);
      }
    }
  }
}

TEST_CASE("random models respect branching and the reachability estimate") {
  Rng rng(17);
  for (const auto& [T, K, b] : std::vector<std::tuple<int, int, int>>{
           {3, 2, 2}, {4, 2, 3}, {3, 3, 2}}) {
    const KOrderModel model = random_k_order_model(T, K, b, rng);
    const LiftedChain lifted = lift_to_first_order(model);

    const double bound = T * std::pow(static_cast<double>(b), K - 1) + K;
    CHECK(static_cast<double>(lifted.states.size()) <= bound);

    for (std::int32_t i = 0; i < lifted.matrix.source_count(); ++i) {
      std::int32_t support = 0;
      for (std::int32_t j = 0; j < lifted.matrix.target_count(); ++j)
        if (lifted.matrix.row(i)[j] > 0.0) ++support;
      CHECK(support <= b);
    }
  }
}

TEST_CASE("direct and lifted sequence laws agree on random models") {
  Rng rng(23);
  for (const auto& [T, K] : std::vector<std::pair<int, int>>{
           {3, 2}, {4, 2}, {3, 3}, {4, 3}, {2, 3}}) {
    const KOrderModel model = random_k_order_model(T, K, 2, rng);
    const SequenceTable table = sequence_distribution(model, 4);
    CHECK(total_variation(table.direct, table.lifted) <= 1e-12);
    double total = 0.0;
    for (double p : table.direct) total += p;
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("augmented lifts keep pre-existing rows bit-identical") {
  const KOrderModel model = hand_model();
  const LiftedChain lifted = lift_to_first_order(model);

  // One new context: token 2 (new) arrived after original token 1.
  const std::int32_t n = static_cast<std::int32_t>(lifted.states.size());
  std::vector<double> row(static_cast<std::size_t>(n), 0.0);
  row[1] = 0.25;
  row[2] = 0.75;
  const LiftedChain expanded =
      expand_augmented(lifted, {Window{1, 2}}, {ProbVector(row)});

  CHECK(expanded.states.size() == lifted.states.size() + 1);
  CHECK(expanded.matrix.source_count() == n + 1);
  CHECK(expanded.matrix.target_count() == n);
  for (std::int32_t i = 0; i < n; ++i)
    CHECK(expanded.matrix.row(i).entries() == lifted.matrix.row(i).entries());
  CHECK(expanded.matrix.row(n)[2] == 0.75);
  CHECK(expanded.states.back() == Window{1, 2});

  // Sequence law over the original tokens is untouched by the expansion:
  // walks from state 0 never enter the new context (it has no incoming
  // mass), so the restricted table is the pre-expansion table.
  const std::vector<double> before = lifted_sequence_table(lifted, 3);
  const std::vector<double> after = lifted_sequence_table(expanded, 3);
  REQUIRE(before.size() == after.size());
  for (std::size_t k = 0; k < before.size(); ++k)
    CHECK(before[k] == after[k]);

  // Contexts must end in a genuinely new token.
  CHECK_THROWS_AS(
      expand_augmented(lifted, {Window{1, 0}}, {ProbVector(row)}),
      std::invalid_argument);
}

TEST_CASE("model validation rejects malformed rows") {
  KOrderModel model(2, 3, 2);
  // Support larger than the branching factor.
  CHECK_THROWS_AS(
      model.set_row({kNullToken, kNullToken}, ProbVector({0.4, 0.3, 0.3})),
      std::invalid_argument);
  CHECK_NOTHROW(
      model.set_row({kNullToken, kNullToken}, ProbVector({0.5, 0.5, 0.0})));
  CHECK(model.row({kNullToken, 2}) == nullptr);

  // Missing reachable row surfaces during lifting.
  CHECK_THROWS_AS(lift_to_first_order(model), std::out_of_range);
}

TEST_CASE("lifted chains round-trip through the text format") {
  Rng rng(31);
  const KOrderModel model = random_k_order_model(3, 2, 2, rng);
  const LiftedChain lifted = lift_to_first_order(model);

  std::stringstream buffer;
  write_lifted_chain(buffer, lifted);
  const LiftedChain loaded = read_lifted_chain(buffer);

  CHECK(loaded.order_K == lifted.order_K);
  CHECK(loaded.vocab_T == lifted.vocab_T);
  REQUIRE(loaded.states.size() == lifted.states.size());
  for (std::size_t i = 0; i < lifted.states.size(); ++i)
    CHECK(loaded.states[i] == lifted.states[i]);
  for (std::int32_t i = 0; i < lifted.matrix.source_count(); ++i)
    CHECK(loaded.matrix.row(i).entries() == lifted.matrix.row(i).entries());
}
