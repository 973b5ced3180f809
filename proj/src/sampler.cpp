#include "vocab_expand/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <memory>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace vexp {

namespace {

constexpr std::uint64_t kDatasetStream = 0x64617461;  // sampler stream tag

void validate_sequence(const std::vector<TokenId>& seq, std::int32_t T,
                       std::int32_t m) {
  bool has_new_nonfinal = false;
  const std::int64_t len = static_cast<std::int64_t>(seq.size());
  for (std::int64_t j = 0; j < len; ++j) {
    const TokenId tok = seq[static_cast<std::size_t>(j)];
    if (tok < 0 || tok >= T + m)
      throw std::invalid_argument("dataset token outside [0, T+m)");
    if (tok >= T && j + 1 < len) {
      has_new_nonfinal = true;
      if (seq[static_cast<std::size_t>(j) + 1] >= T)
        throw std::invalid_argument(
            "token following a new token must lie in the original vocabulary");
    }
  }
  if (!has_new_nonfinal)
    throw std::invalid_argument(
        "every sequence needs a new token at a non-final position");
}

}  // namespace

void SamplingSpec::validate() const {
  if (prefix_len < 0 || suffix_len < 0)
    throw std::invalid_argument("SamplingSpec: walk lengths must be >= 0");
  if (occurrences_per_sequence < 1)
    throw std::invalid_argument("SamplingSpec: occurrences_per_sequence must be >= 1");
  if (!(v_to_u_leak >= 0.0) || v_to_u_leak > 1.0)
    throw std::invalid_argument("SamplingSpec: v_to_u_leak must be in [0, 1]");
  if (!allow_v_to_u && v_to_u_leak != 0.0)
    throw std::invalid_argument("SamplingSpec: v_to_u_leak requires allow_v_to_u");
}

Dataset::Dataset(std::vector<std::vector<TokenId>> sequences, std::int32_t T,
                 std::int32_t m, std::uint64_t seed)
    : T_(T), m_(m), seed_(seed) {
  if (T < 1 || m < 1)
    throw std::invalid_argument("Dataset: need T >= 1 and m >= 1");
  if (sequences.empty()) throw std::invalid_argument("Dataset: no sequences");
  offsets_.reserve(sequences.size() + 1);
  for (const auto& seq : sequences) {
    validate_sequence(seq, T, m);
    tokens_.insert(tokens_.end(), seq.begin(), seq.end());
    offsets_.push_back(static_cast<std::int64_t>(tokens_.size()));
  }
}

std::vector<TokenId> Dataset::sequence(std::int64_t i) const {
  if (i < 0 || i >= size()) throw std::out_of_range("Dataset: sequence index");
  return std::vector<TokenId>(
      tokens_.begin() + static_cast<std::ptrdiff_t>(offsets_[static_cast<std::size_t>(i)]),
      tokens_.begin() + static_cast<std::ptrdiff_t>(offsets_[static_cast<std::size_t>(i) + 1]));
}

namespace {

// One row sampler per state, built lazily; rows are reused across sequences.
class RowSamplers {
 public:
  explicit RowSamplers(const TransitionMatrix& P)
      : P_(P), samplers_(static_cast<std::size_t>(P.source_count())) {}

  TokenId draw(TokenId state, Rng& rng) {
    auto& slot = samplers_[static_cast<std::size_t>(state)];
    if (!slot)
      slot = std::make_unique<CategoricalSampler>(P_.row(state).entries());
    return slot->draw(rng);
  }

 private:
  const TransitionMatrix& P_;
  std::vector<std::unique_ptr<CategoricalSampler>> samplers_;
};

}  // namespace

Dataset generate_dataset(const TransitionMatrix& P_expanded,
                         const SamplingSpec& spec, std::int64_t N, Rng& rng) {
  spec.validate();
  const std::int32_t T = P_expanded.target_count();
  const std::int32_t m = P_expanded.new_count();
  if (m < 1) throw std::domain_error("generate_dataset: no new tokens to place");
  if (N < 1) throw std::invalid_argument("generate_dataset: N must be >= 1");

  RowSamplers samplers(P_expanded);
  const bool leak = spec.allow_v_to_u && spec.v_to_u_leak > 0.0;

  std::vector<std::vector<TokenId>> sequences;
  sequences.reserve(static_cast<std::size_t>(N));
  std::vector<TokenId> seq;
  for (std::int64_t i = 0; i < N; ++i) {
    seq.clear();

    // Walk `steps` tokens, first one drawn by `first`, rest by the chain.
    auto walk = [&](std::int32_t steps, bool fresh_start) {
      std::int32_t done = 0;
      while (done < steps) {
        TokenId next;
        if (fresh_start && seq.empty()) {
          next = static_cast<TokenId>(uniform_int(rng, T));
        } else if (leak && steps - done >= 2 && !seq.empty() && seq.back() < T &&
                   uniform_double(rng) < spec.v_to_u_leak) {
          // Leak: visit a uniform new token, then return to V via its row.
          const TokenId u = T + static_cast<TokenId>(uniform_int(rng, m));
          seq.push_back(u);
          seq.push_back(samplers.draw(u, rng));
          done += 2;
          continue;
        } else if (seq.empty()) {
          next = static_cast<TokenId>(uniform_int(rng, T));
        } else {
          next = samplers.draw(seq.back(), rng);
        }
        seq.push_back(next);
        ++done;
      }
    };

    walk(spec.prefix_len, /*fresh_start=*/true);
    for (std::int32_t b = 0; b < spec.occurrences_per_sequence; ++b) {
      const TokenId u = T + static_cast<TokenId>(uniform_int(rng, m));
      seq.push_back(u);
      seq.push_back(samplers.draw(u, rng));
    }
    walk(spec.suffix_len, /*fresh_start=*/false);
    sequences.push_back(seq);
  }
  return Dataset(std::move(sequences), T, m, spec.seed);
}

Dataset generate_dataset(const TransitionMatrix& P_expanded,
                         const SamplingSpec& spec, std::int64_t N) {
  Rng rng(mix_seed(spec.seed, kDatasetStream, 0));
  return generate_dataset(P_expanded, spec, N, rng);
}

EmpiricalDistribution empirical_distributions(const Dataset& D) {
  const std::int32_t T = D.vocab();
  const std::int32_t m = D.new_count();
  std::vector<std::vector<std::int64_t>> counts(
      static_cast<std::size_t>(m),
      std::vector<std::int64_t>(static_cast<std::size_t>(T), 0));

  for (std::int64_t i = 0; i < D.size(); ++i) {
    const std::int64_t len = D.length(i);
    for (std::int64_t j = 0; j + 1 < len; ++j) {
      const TokenId tok = D.token(i, j);
      if (tok < T) continue;
      const TokenId succ = D.token(i, j + 1);
      ++counts[static_cast<std::size_t>(tok - T)][static_cast<std::size_t>(succ)];
    }
  }

  EmpiricalDistribution out;
  out.per_token.resize(static_cast<std::size_t>(m));
  out.n_min = std::numeric_limits<std::int64_t>::max();
  for (std::int32_t u = 0; u < m; ++u) {
    TokenEstimate& est = out.per_token[static_cast<std::size_t>(u)];
    std::int64_t total = 0;
    for (std::int64_t c : counts[static_cast<std::size_t>(u)]) total += c;
    est.count = total;
    if (total > 0) {
      std::vector<double> q(static_cast<std::size_t>(T));
      for (std::int32_t k = 0; k < T; ++k)
        q[static_cast<std::size_t>(k)] =
            static_cast<double>(counts[static_cast<std::size_t>(u)][static_cast<std::size_t>(k)]) /
            static_cast<double>(total);
      est.q_hat = ProbVector(std::move(q));
      est.has_estimate = true;
    }
    out.n_min = std::min(out.n_min, total);
  }
  return out;
}

MinCountReport min_count_trial(const TransitionMatrix& P_expanded,
                               const SamplingSpec& spec, std::int64_t N,
                               double epsilon, std::int32_t replications) {
  if (replications < 1)
    throw std::invalid_argument("min_count_trial: replications must be >= 1");
  if (!(epsilon > 0.0) || !(epsilon < 1.0))
    throw std::invalid_argument("min_count_trial: epsilon must be in (0, 1)");
  const std::int32_t m = P_expanded.new_count();
  const double occurrences =
      static_cast<double>(N) * spec.occurrences_per_sequence;

  MinCountReport report;
  report.replications = replications;
  report.threshold = (1.0 - epsilon) * occurrences / static_cast<double>(m);
  report.analytic_bound =
      1.0 - m * std::exp(-epsilon * epsilon * occurrences / (2.0 * m));

  std::int32_t passes = 0;
  for (std::int32_t r = 0; r < replications; ++r) {
    Rng rng(mix_seed(spec.seed, kDatasetStream, static_cast<std::uint64_t>(r) + 1));
    const Dataset D = generate_dataset(P_expanded, spec, N, rng);
    const EmpiricalDistribution stats = empirical_distributions(D);
    if (static_cast<double>(stats.n_min) >= report.threshold) ++passes;
  }
  report.empirical_probability =
      static_cast<double>(passes) / static_cast<double>(replications);
  return report;
}

void write_dataset(std::ostream& os, const Dataset& D) {
  os << "N=" << D.size() << " T=" << D.vocab() << " m=" << D.new_count()
     << " seed=" << D.seed() << "\n";
  for (std::int64_t i = 0; i < D.size(); ++i) {
    const std::int64_t len = D.length(i);
    for (std::int64_t j = 0; j < len; ++j) {
      if (j > 0) os << " ";
      os << D.token(i, j);
    }
    os << "\n";
  }
}

Dataset read_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line))
    throw std::runtime_error("read_dataset: missing header");
  long long n = 0;
  int T = 0;
  int m = 0;
  unsigned long long seed = 0;
  if (std::sscanf(line.c_str(), "N=%lld T=%d m=%d seed=%llu", &n, &T, &m,
                  &seed) != 4)
    throw std::runtime_error("read_dataset: bad header: " + line);

  std::vector<std::vector<TokenId>> sequences;
  sequences.reserve(static_cast<std::size_t>(n));
  for (long long i = 0; i < n; ++i) {
    if (!std::getline(is, line))
      throw std::runtime_error("read_dataset: missing sequence line");
    std::istringstream ls(line);
    std::vector<TokenId> seq;
    TokenId tok;
    while (ls >> tok) seq.push_back(tok);
    if (seq.empty()) throw std::runtime_error("read_dataset: empty sequence");
    sequences.push_back(std::move(seq));
  }
  return Dataset(std::move(sequences), T, m, seed);
}

}  // namespace vexp
