#pragma once

/**
 * Experiment engine: flat key=value configs, seeded Monte-Carlo sweeps over
 * (N, m, s), CSV/JSON emission, slope fitting, and verification gates.
 *
 * Determinism contract: trial (grid_index, replication) always runs on the
 * RNG stream seeded by mix_seed(master_seed, grid_index, replication) and
 * writes into a preallocated row slot, so raw.csv is byte-identical across
 * runs and across any number of worker threads.  Wall-clock timing is the
 * one quantity that cannot be deterministic, so the wall_ms column is left
 * empty and the aggregate run time goes to meta.txt instead.
 */

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vocab_expand/chain.hpp"
#include "vocab_expand/sampler.hpp"
#include "vocab_expand/synth_model.hpp"

namespace vexp {

enum class ExperimentKind {
  kIdentify,
  kSparseRisk,
  kMinCount,
  kHigherOrderCheck,
  kEmbedTune,
};

std::string to_string(ExperimentKind kind);
ExperimentKind experiment_kind_from_string(const std::string& name);

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kIdentify;
  ChainSpec chain;         // m and s are overridden per grid point
  SamplingSpec sampling;   // seed is overridden per trial
  std::vector<std::int64_t> n_grid = {1000};
  std::vector<std::int32_t> m_grid = {5};
  std::vector<std::int32_t> s_grid = {1};
  bool use_theorem_n = false;  // identify only: N from the sufficiency formula
  std::int32_t replications = 1;
  double delta = 0.1;
  double epsilon = 0.5;       // min_count threshold parameter
  std::int32_t k_order = 2;   // higher_order_check
  std::int32_t branching = 2;
  std::int32_t seq_len = 4;
  std::int32_t tune_steps = 2000;
  double tune_lr = 0.0;       // 0: auto
  double tune_decay = 0.0;
  std::string output_dir = "out";
  std::uint64_t master_seed = 0;

  void validate() const;
};

// Flat `key = value` text; repeated N/m/s keys form sweep grids, any other
// repeated or unknown key is an error.  '#' starts a comment line.
ExperimentConfig parse_config(std::istream& is, const std::string& source);
ExperimentConfig load_config(const std::string& path);

// One trial per row; every column of the fixed raw.csv schema, with absent
// metrics kept as empty fields.  wall_ms stays empty (see file comment).
struct RawRow {
  std::string experiment;
  std::optional<std::int64_t> T;
  std::optional<std::int64_t> d;
  std::optional<std::int64_t> m;
  std::optional<std::int64_t> s;
  std::optional<std::int64_t> N;
  std::optional<double> gamma;
  std::optional<double> c;
  std::int64_t replication = 0;
  std::uint64_t seed = 0;
  std::optional<std::int32_t> success;
  std::optional<double> max_risk;
  std::optional<std::int64_t> n_min;
  std::optional<double> wall_ms;
};

inline constexpr const char* kRawCsvHeader =
    "experiment,T,d,m,s,N,gamma,c,replication,seed,success,max_risk,n_min,wall_ms";

struct ExperimentResult {
  std::vector<RawRow> rows;             // sorted by (grid_index, replication)
  std::int64_t failed_trials = 0;       // chain-rejection trials (rows kept, metrics empty)
  double total_wall_ms = 0.0;           // aggregate, reported in meta.txt only
  double lipschitz_estimate = 0.0;      // 0 when the kind has no link function
  std::int32_t jobs_used = 1;
};

// Theorem sample size: ceil(8 m / min{gamma^2/log^2 c, 1} * log(2 m T / delta)).
std::int64_t theorem_sample_size(std::int32_t T, std::int32_t m, double gamma,
                                 double c, double delta);

// Runs |grid| x replications trials on `jobs` worker threads (jobs < 1 is
// treated as 1).  Chain-generation rejection failures are recorded as rows
// with empty metrics and counted, never silently dropped.
ExperimentResult run_experiment(const ExperimentConfig& config,
                                std::int32_t jobs = 1);

// raw.csv round-trip.
void write_raw_csv(std::ostream& os, const std::vector<RawRow>& rows);
std::vector<RawRow> read_raw_csv(std::istream& is);

// summary.csv content: per-(T,d,m,s,N,c) aggregates recomputable from raw
// rows alone; emit_outputs and any re-aggregation share this code path.
std::string summary_csv(const std::vector<RawRow>& rows);

// Writes raw.csv (or raw.json), summary.csv, meta.txt, and the plots into
// config.output_dir; returns the paths written.
std::vector<std::string> emit_outputs(const ExperimentResult& result,
                                      const ExperimentConfig& config,
                                      const std::string& format = "csv");

// Log-log plot of the per-axis-value mean of `metric` ("max_risk",
// "success", "n_min", or "gamma") against x_field in {"N", "m", "s"}, with
// standard-error bars; pick_x_field returns the first of N, m, s that
// actually varies across the rows.
void write_metric_plot(std::ostream& os, const std::vector<RawRow>& rows,
                       const std::string& metric, const std::string& x_field);
std::string pick_x_field(const std::vector<RawRow>& rows);

// Ordinary least squares on (log x, log y-mean) per distinct grid value of
// x_field in {"N", "m", "s"}; y_field in {"max_risk", "n_min", "success"}.
// Throws std::domain_error on fewer than 3 usable points or nonpositive
// means (the message lists the offending grid values).
struct SlopeFit {
  double slope = 0.0;
  double std_error = 0.0;
  std::int32_t points = 0;
};

SlopeFit fit_loglog_slope(const ExperimentResult& result,
                          const std::string& x_field,
                          const std::string& y_field);

// OLS in log-log space on explicit points (same rules as above).
SlopeFit ols_loglog(const std::vector<double>& x, const std::vector<double>& y);

// Spearman rank correlation with average ranks on ties.
double spearman_rho(const std::vector<double>& x, const std::vector<double>& y);

// Per-kind verification gates, printable as one line each.
struct VerifyReport {
  struct Line {
    std::string label;
    bool pass = false;
  };
  std::vector<Line> lines;
  bool passed() const;
};

VerifyReport verify_experiment(const ExperimentConfig& config,
                               const ExperimentResult& result);

}  // namespace vexp
