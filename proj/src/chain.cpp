#include "vocab_expand/chain.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace vexp {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

ProbVector::ProbVector(std::vector<double> entries) : entries_(std::move(entries)) {
  if (entries_.empty()) {
    throw std::invalid_argument("ProbVector: empty");
  }
  double sum = 0.0;
  for (double e : entries_) {
    if (!(e >= 0.0)) {
      throw std::invalid_argument("ProbVector: negative or NaN entry");
    }
    sum += e;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) {
    throw std::invalid_argument("ProbVector: entries sum to " +
                                format_double(sum) + ", expected 1");
  }
}

std::vector<TokenId> ProbVector::support() const {
  std::vector<TokenId> out;
  for (std::int32_t i = 0; i < size(); ++i) {
    if (entries_[static_cast<std::size_t>(i)] > 0.0) out.push_back(i);
  }
  return out;
}

TransitionMatrix::TransitionMatrix(std::vector<ProbVector> rows,
                                   std::int32_t target_count)
    : rows_(std::move(rows)), target_count_(target_count) {
  if (rows_.empty()) {
    throw std::invalid_argument("TransitionMatrix: no rows");
  }
  if (target_count_ < 1 || target_count_ > source_count()) {
    throw std::invalid_argument("TransitionMatrix: bad target count");
  }
  for (const ProbVector& r : rows_) {
    if (r.size() != target_count_) {
      throw std::invalid_argument("TransitionMatrix: row length mismatch");
    }
  }
}

TransitionMatrix TransitionMatrix::from_rows(std::vector<ProbVector> rows) {
  if (rows.empty()) {
    throw std::invalid_argument("TransitionMatrix: no rows");
  }
  const std::int32_t t = rows.front().size();
  return TransitionMatrix(std::move(rows), t);
}

const ProbVector& TransitionMatrix::row(std::int32_t v) const {
  if (v < 0 || v >= source_count()) {
    throw std::out_of_range("TransitionMatrix: row index out of range");
  }
  return rows_[static_cast<std::size_t>(v)];
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("kl_divergence: dimension mismatch");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) {
      if (q[i] == 0.0) return std::numeric_limits<double>::infinity();
      sum += p[i] * std::log(p[i] / q[i]);
    }
  }
  return sum;
}

double kl_divergence(const ProbVector& p, const ProbVector& q) {
  return kl_divergence(p.entries(), q.entries());
}

MarginReport separation_margin(const TransitionMatrix& P) {
  const std::int32_t n = P.source_count();
  if (n < 2) {
    throw std::domain_error("separation_margin: need at least 2 rows");
  }
  MarginReport report;
  for (std::int32_t i = 0; i < n; ++i) {
    for (std::int32_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = kl_divergence(P.row(i), P.row(j));
      if (!std::isfinite(d)) continue;
      if (!report.finite || d < report.gamma) {
        report.gamma = d;
        report.arg_i = i;
        report.arg_j = j;
        report.finite = true;
      }
    }
  }
  return report;
}

TransitionMatrix expand_state_space(const TransitionMatrix& P,
                                    const std::vector<ProbVector>& new_rows) {
  std::vector<ProbVector> rows = P.rows();
  for (const ProbVector& r : new_rows) {
    if (r.size() != P.target_count()) {
      throw std::invalid_argument("expand_state_space: new row length mismatch");
    }
    rows.push_back(r);
  }
  return TransitionMatrix(std::move(rows), P.target_count());
}

std::vector<TokenId> simulate_walk(const TransitionMatrix& P, TokenId start,
                                   std::int64_t length, Rng& rng) {
  if (start < 0 || start >= P.source_count()) {
    throw std::out_of_range("simulate_walk: start token out of range");
  }
  if (length < 1) {
    throw std::invalid_argument("simulate_walk: length must be >= 1");
  }
  std::vector<CategoricalSampler> samplers;
  samplers.reserve(static_cast<std::size_t>(P.source_count()));
  for (std::int32_t v = 0; v < P.source_count(); ++v) {
    samplers.emplace_back(P.row(v).entries());
  }
  std::vector<TokenId> walk;
  walk.reserve(static_cast<std::size_t>(length));
  TokenId cur = start;
  walk.push_back(cur);
  for (std::int64_t t = 1; t < length; ++t) {
    cur = samplers[static_cast<std::size_t>(cur)].draw(rng);
    walk.push_back(cur);
  }
  return walk;
}

void write_transition_matrix(std::ostream& os, const TransitionMatrix& P) {
  os << "T=" << P.target_count() << " m=" << P.new_count() << "\n";
  for (std::int32_t v = 0; v < P.source_count(); ++v) {
    const ProbVector& r = P.row(v);
    for (std::int32_t k = 0; k < r.size(); ++k) {
      if (k > 0) os << ' ';
      os << format_double(r[k]);
    }
    os << "\n";
  }
}

namespace {

std::int64_t parse_header_field(const std::string& line, const std::string& key) {
  const std::string tag = key + "=";
  const std::size_t pos = line.find(tag);
  if (pos == std::string::npos) {
    throw std::runtime_error("matrix header: missing field " + key);
  }
  return std::stoll(line.substr(pos + tag.size()));
}

}  // namespace

TransitionMatrix read_transition_matrix(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) {
    throw std::runtime_error("matrix header: unexpected end of input");
  }
  const std::int32_t T = static_cast<std::int32_t>(parse_header_field(header, "T"));
  const std::int32_t m = static_cast<std::int32_t>(parse_header_field(header, "m"));
  if (T < 1 || m < 0) {
    throw std::runtime_error("matrix header: bad dimensions");
  }
  std::vector<ProbVector> rows;
  rows.reserve(static_cast<std::size_t>(T + m));
  std::string line;
  for (std::int32_t v = 0; v < T + m; ++v) {
    if (!std::getline(is, line)) {
      throw std::runtime_error("matrix body: unexpected end of input");
    }
    std::istringstream ls(line);
    std::vector<double> entries(static_cast<std::size_t>(T));
    for (std::int32_t k = 0; k < T; ++k) {
      if (!(ls >> entries[static_cast<std::size_t>(k)])) {
        throw std::runtime_error("matrix body: short row");
      }
    }
    rows.emplace_back(std::move(entries));
  }
  return TransitionMatrix(std::move(rows), T);
}

}  // namespace vexp
