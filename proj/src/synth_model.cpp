#include "vocab_expand/synth_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace vexp {

namespace {

constexpr double kClusterJitter = 0.25;
constexpr double kEmbeddingRadius2 = 3.0;

Eigen::VectorXd gaussian_vector(std::int32_t d, Rng& rng) {
  Eigen::VectorXd v(d);
  for (std::int32_t i = 0; i < d; ++i) v[i] = normal_double(rng);
  return v;
}

// Orthonormal centers via QR when they fit in the ambient dimension,
// otherwise random unit vectors.
Eigen::MatrixXd cluster_centers(std::int32_t k, std::int32_t d, Rng& rng) {
  Eigen::MatrixXd g(d, k);
  for (std::int32_t j = 0; j < k; ++j) g.col(j) = gaussian_vector(d, rng);
  if (k <= d) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, k);
    return q;
  }
  for (std::int32_t j = 0; j < k; ++j) g.col(j).normalize();
  return g;
}

void validate_sparse(const SparseVec& alpha, std::int32_t vocab) {
  TokenId prev = -1;
  for (const SparseEntry& e : alpha) {
    if (e.index < 0 || e.index >= vocab)
      throw std::out_of_range("sparse coefficient index outside vocabulary");
    if (e.index <= prev)
      throw std::invalid_argument("sparse coefficients must be sorted by unique index");
    prev = e.index;
  }
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(Eigen::MatrixXd entries)
    : entries_(std::move(entries)) {
  if (entries_.rows() < 1 || entries_.cols() < 1)
    throw std::invalid_argument("embedding matrix must be nonempty");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(entries_);
  max_singular_value_ = svd.singularValues()(0);
}

TokenId GroundTruth::v_star(std::int32_t u) const {
  const SparseVec& a = alpha_star.at(static_cast<std::size_t>(u));
  if (a.size() != 1)
    throw std::domain_error("v_star is defined only for one-to-one truths");
  return a[0].index;
}

void ChainSpec::validate() const {
  if (T < 2) throw std::invalid_argument("ChainSpec: T must be >= 2");
  if (d < 1) throw std::invalid_argument("ChainSpec: d must be >= 1");
  if (m < 1) throw std::invalid_argument("ChainSpec: m must be >= 1");
  if (s < 1 || s > T) throw std::invalid_argument("ChainSpec: s must be in [1, T]");
  if (cluster_count < 1)
    throw std::invalid_argument("ChainSpec: cluster_count must be >= 1");
  if (!(floor_c > 0.0) || floor_c > 1.0)
    throw std::invalid_argument("ChainSpec: floor_c must be in (0, 1]");
  if (!(temperature > 0.0))
    throw std::invalid_argument("ChainSpec: temperature must be positive");
  if (min_gamma < 0.0)
    throw std::invalid_argument("ChainSpec: min_gamma must be >= 0");
  if (!(norm_bound_B > 0.0))
    throw std::invalid_argument("ChainSpec: norm_bound_B must be positive");
}

std::vector<double> floor_distribution(std::vector<double> probs, double c) {
  if (c <= 0.0) return probs;
  // Renormalizing only grows survivors, so each pass can only zero entries
  // that were already below c; at most probs.size() passes are needed.
  while (true) {
    double kept = 0.0;
    bool changed = false;
    for (double& p : probs) {
      if (p > 0.0 && p < c) {
        p = 0.0;
        changed = true;
      }
      kept += p;
    }
    if (kept <= 0.0)
      throw std::domain_error("floor removed all probability mass");
    for (double& p : probs) p /= kept;
    if (!changed) return probs;
  }
}

std::vector<double> raw_softmax(const LinkFunction& f, const EmbeddingMatrix& E,
                                const Eigen::VectorXd& e) {
  if (e.size() != E.dim())
    throw std::invalid_argument("embedding-space point has wrong dimension");
  Eigen::VectorXd logits = E.entries() * e / f.temperature;
  const double top = logits.maxCoeff();
  std::vector<double> out(static_cast<std::size_t>(E.vocab()));
  double sum = 0.0;
  for (std::int32_t i = 0; i < E.vocab(); ++i) {
    out[static_cast<std::size_t>(i)] = std::exp(logits[i] - top);
    sum += out[static_cast<std::size_t>(i)];
  }
  for (double& p : out) p /= sum;
  return out;
}

ProbVector link_from_embedding(const LinkFunction& f, const EmbeddingMatrix& E,
                               const Eigen::VectorXd& e) {
  return ProbVector(floor_distribution(raw_softmax(f, E, e), f.floor_c));
}

Eigen::VectorXd embed_sparse(const EmbeddingMatrix& E, const SparseVec& alpha) {
  validate_sparse(alpha, E.vocab());
  Eigen::VectorXd e = Eigen::VectorXd::Zero(E.dim());
  for (const SparseEntry& entry : alpha)
    e += entry.value * E.entries().row(entry.index).transpose();
  return e;
}

ProbVector apply_link(const LinkFunction& f, const EmbeddingMatrix& E,
                      const SparseVec& alpha) {
  return link_from_embedding(f, E, embed_sparse(E, alpha));
}

namespace {

SparseVec draw_sparse_alpha(std::int32_t T, std::int32_t s, double B, Rng& rng) {
  // s distinct support indices by partial Fisher-Yates over [0, T).
  std::vector<TokenId> pool(static_cast<std::size_t>(T));
  for (std::int32_t i = 0; i < T; ++i) pool[static_cast<std::size_t>(i)] = i;
  for (std::int32_t i = 0; i < s; ++i) {
    const std::int64_t j = i + uniform_int(rng, T - i);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  std::vector<TokenId> support(pool.begin(), pool.begin() + s);
  std::sort(support.begin(), support.end());

  SparseVec alpha;
  alpha.reserve(static_cast<std::size_t>(s));
  double norm2 = 0.0;
  for (TokenId idx : support) {
    const double value = 0.5 + uniform_double(rng);
    alpha.push_back({idx, value});
    norm2 += value * value;
  }
  const double norm = std::sqrt(norm2);
  if (norm > B) {
    for (SparseEntry& entry : alpha) entry.value *= B / norm;
  }
  return alpha;
}

}  // namespace

SyntheticChain build_chain(const ChainSpec& spec, Rng& rng) {
  spec.validate();
  const LinkFunction link{spec.temperature, spec.floor_c};
  const double radius = std::sqrt(kEmbeddingRadius2);

  std::int32_t rejected = 0;
  for (std::int32_t attempt = 0; attempt < kMaxChainAttempts; ++attempt) {
    const Eigen::MatrixXd centers = cluster_centers(spec.cluster_count, spec.d, rng);
    Eigen::MatrixXd rows_e(spec.T, spec.d);
    std::vector<std::int32_t> cluster_of(static_cast<std::size_t>(spec.T));
    for (std::int32_t t = 0; t < spec.T; ++t) {
      const std::int32_t k = t % spec.cluster_count;
      cluster_of[static_cast<std::size_t>(t)] = k;
      Eigen::VectorXd v = centers.col(k) + kClusterJitter * gaussian_vector(spec.d, rng);
      v.normalize();
      rows_e.row(t) = (radius * v).transpose();
    }
    EmbeddingMatrix embedding(std::move(rows_e));

    std::vector<ProbVector> base_rows;
    base_rows.reserve(static_cast<std::size_t>(spec.T));
    bool floored_out = false;
    for (std::int32_t t = 0; t < spec.T; ++t) {
      try {
        base_rows.push_back(link_from_embedding(
            link, embedding, embedding.entries().row(t).transpose()));
      } catch (const std::domain_error&) {
        floored_out = true;
        break;
      }
    }
    if (floored_out) {
      ++rejected;
      continue;
    }
    TransitionMatrix base = TransitionMatrix::from_rows(std::move(base_rows));

    const MarginReport margin = separation_margin(base);
    if (!margin.finite || !(margin.gamma > 0.0) || margin.gamma < spec.min_gamma) {
      ++rejected;
      continue;
    }

    GroundTruth truth;
    truth.sparsity_s = spec.s;
    truth.norm_bound_B = spec.norm_bound_B;
    truth.alpha_star.reserve(static_cast<std::size_t>(spec.m));
    truth.q_star.reserve(static_cast<std::size_t>(spec.m));
    bool truth_floored_out = false;
    for (std::int32_t u = 0; u < spec.m; ++u) {
      SparseVec alpha = draw_sparse_alpha(spec.T, spec.s, spec.norm_bound_B, rng);
      try {
        truth.q_star.push_back(apply_link(link, embedding, alpha));
      } catch (const std::domain_error&) {
        truth_floored_out = true;
        break;
      }
      truth.alpha_star.push_back(std::move(alpha));
    }
    if (truth_floored_out) {
      ++rejected;
      continue;
    }

    SyntheticChain chain;
    chain.matrix = expand_state_space(base, truth.q_star);
    chain.embedding = std::move(embedding);
    chain.link = link;
    chain.truth = std::move(truth);
    chain.margin = margin;
    chain.cluster_of = std::move(cluster_of);
    chain.rejected_attempts = rejected;
    return chain;
  }

  std::ostringstream msg;
  msg << "build_chain: no draw in " << kMaxChainAttempts
      << " attempts had a well-defined margin >= " << format_double(spec.min_gamma)
      << " (T=" << spec.T << " d=" << spec.d << " clusters=" << spec.cluster_count
      << " temperature=" << format_double(spec.temperature)
      << " floor_c=" << format_double(spec.floor_c) << ")";
  throw std::runtime_error(msg.str());
}

SyntheticChain build_chain(const ChainSpec& spec) {
  Rng rng(mix_seed(spec.seed, 0x63686169, 0));  // stream tag for chain draws
  return build_chain(spec, rng);
}

GroundTruth one_to_one_truth(const TransitionMatrix& P, std::int32_t m, Rng& rng) {
  if (m < 1) throw std::invalid_argument("one_to_one_truth: m must be >= 1");
  GroundTruth truth;
  truth.sparsity_s = 1;
  truth.norm_bound_B = 1.0;
  truth.alpha_star.reserve(static_cast<std::size_t>(m));
  truth.q_star.reserve(static_cast<std::size_t>(m));
  for (std::int32_t u = 0; u < m; ++u) {
    const TokenId v = static_cast<TokenId>(uniform_int(rng, P.target_count()));
    truth.alpha_star.push_back(SparseVec{{v, 1.0}});
    truth.q_star.push_back(P.row(v));
  }
  return truth;
}

double estimate_lipschitz(const LinkFunction& f, const EmbeddingMatrix& E,
                          Rng& rng, std::int32_t samples) {
  constexpr double kStep = 1e-4;
  double best = 0.0;
  for (std::int32_t i = 0; i < samples; ++i) {
    Eigen::VectorXd x = gaussian_vector(E.dim(), rng);
    Eigen::VectorXd u = gaussian_vector(E.dim(), rng);
    u.normalize();
    const std::vector<double> f0 = raw_softmax(f, E, x);
    const std::vector<double> f1 = raw_softmax(f, E, x + kStep * u);
    double l1 = 0.0;
    for (std::size_t j = 0; j < f0.size(); ++j) l1 += std::abs(f1[j] - f0[j]);
    best = std::max(best, l1 / kStep);
  }
  return best;
}

void write_chain(std::ostream& os, const TransitionMatrix& P,
                 const GroundTruth* truth) {
  write_transition_matrix(os, P);
  if (truth == nullptr) return;
  if (static_cast<std::int32_t>(truth->alpha_star.size()) != P.new_count())
    throw std::invalid_argument("write_chain: truth size does not match new rows");
  os << "[ground_truth]\n";
  os << "s=" << truth->sparsity_s << " B=" << format_double(truth->norm_bound_B)
     << "\n";
  for (std::size_t u = 0; u < truth->alpha_star.size(); ++u) {
    os << u << " ";
    const SparseVec& alpha = truth->alpha_star[u];
    for (std::size_t i = 0; i < alpha.size(); ++i) {
      if (i > 0) os << ",";
      os << alpha[i].index << ":" << format_double(alpha[i].value);
    }
    os << "\n";
  }
}

ChainFile read_chain(std::istream& is) {
  ChainFile file;
  file.matrix = read_transition_matrix(is);

  std::string line;
  if (!std::getline(is, line)) return file;
  if (line != "[ground_truth]")
    throw std::runtime_error("read_chain: expected [ground_truth], got: " + line);

  GroundTruth truth;
  if (!std::getline(is, line))
    throw std::runtime_error("read_chain: missing ground-truth header");
  if (std::sscanf(line.c_str(), "s=%d B=%lf", &truth.sparsity_s,
                  &truth.norm_bound_B) != 2)
    throw std::runtime_error("read_chain: bad ground-truth header: " + line);

  const std::int32_t m = file.matrix.new_count();
  truth.alpha_star.reserve(static_cast<std::size_t>(m));
  truth.q_star.reserve(static_cast<std::size_t>(m));
  for (std::int32_t u = 0; u < m; ++u) {
    if (!std::getline(is, line))
      throw std::runtime_error("read_chain: missing coefficient line");
    std::istringstream ls(line);
    std::int32_t tag = -1;
    ls >> tag;
    if (!ls || tag != u)
      throw std::runtime_error("read_chain: bad coefficient line: " + line);
    std::string rest;
    ls >> rest;
    SparseVec alpha;
    std::istringstream entries(rest);
    std::string item;
    while (std::getline(entries, item, ',')) {
      SparseEntry e;
      if (std::sscanf(item.c_str(), "%d:%lf", &e.index, &e.value) != 2)
        throw std::runtime_error("read_chain: bad coefficient entry: " + item);
      alpha.push_back(e);
    }
    if (alpha.empty())
      throw std::runtime_error("read_chain: empty coefficient line: " + line);
    validate_sparse(alpha, file.matrix.target_count());
    truth.alpha_star.push_back(std::move(alpha));
    truth.q_star.push_back(file.matrix.row(file.matrix.target_count() + u));
  }
  file.truth = std::move(truth);
  return file;
}

}  // namespace vexp
