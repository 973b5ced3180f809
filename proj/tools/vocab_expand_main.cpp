#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vocab_expand/harness.hpp"

namespace {

std::int32_t resolve_jobs(std::int32_t cli_jobs) {
  // VOCAB_EXPAND_JOBS wins over --jobs.
  if (const char* env = std::getenv("VOCAB_EXPAND_JOBS")) {
    try {
      return static_cast<std::int32_t>(std::stol(env));
    } catch (const std::exception&) {
      throw std::runtime_error(std::string("VOCAB_EXPAND_JOBS is not an integer: ") + env);
    }
  }
  return cli_jobs;
}

int run_command(const std::string& config_path, const std::string& out_dir,
                const std::optional<std::uint64_t>& seed, std::int32_t jobs,
                const std::string& format) {
  vexp::ExperimentConfig config = vexp::load_config(config_path);
  if (!out_dir.empty()) config.output_dir = out_dir;
  if (seed.has_value()) config.master_seed = *seed;

  const vexp::ExperimentResult result =
      vexp::run_experiment(config, resolve_jobs(jobs));
  const std::vector<std::string> written =
      vexp::emit_outputs(result, config, format);
  for (const std::string& path : written) std::cout << "wrote " << path << "\n";
  std::cout << "trials " << result.rows.size() << " (rejected "
            << result.failed_trials << "), jobs " << result.jobs_used << ", "
            << result.total_wall_ms / 1000.0 << " s\n";
  return 0;
}

int verify_command(const std::string& config_path, std::int32_t jobs) {
  const vexp::ExperimentConfig config = vexp::load_config(config_path);
  const vexp::ExperimentResult result =
      vexp::run_experiment(config, resolve_jobs(jobs));
  const vexp::VerifyReport report = vexp::verify_experiment(config, result);
  for (const auto& line : report.lines)
    std::cout << (line.pass ? "PASS" : "FAIL") << "  " << line.label << "\n";
  std::cout << (report.passed() ? "verify: all gates passed"
                                : "verify: gate failure")
            << "\n";
  return report.passed() ? 0 : 1;
}

int show_command(const std::string& raw_path, const std::string& metric,
                 const std::string& out_path) {
  std::ifstream is(raw_path);
  if (!is) throw std::runtime_error("cannot open: " + raw_path);
  const std::vector<vexp::RawRow> rows = vexp::read_raw_csv(is);
  const std::string x_field = vexp::pick_x_field(rows);
  if (out_path == "-") {
    vexp::write_metric_plot(std::cout, rows, metric, x_field);
  } else {
    std::ofstream os(out_path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write: " + out_path);
    vexp::write_metric_plot(os, rows, metric, x_field);
    std::cout << "wrote " << out_path << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Markov-chain vocabulary expansion experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::int32_t jobs = 1;
  std::string format = "csv";

  CLI::App* run = app.add_subcommand("run", "run an experiment config");
  run->add_option("config", config_path, "experiment config file")->required();
  run->add_option("--out", out_dir, "output directory (overrides config)");
  run->add_option("--seed", seed, "master seed (overrides config)");
  run->add_option("--jobs", jobs, "worker threads");
  run->add_option("--format", format, "raw table format: csv or json")
      ->check(CLI::IsMember({"csv", "json"}));

  std::string verify_config;
  std::int32_t verify_jobs = 1;
  CLI::App* verify =
      app.add_subcommand("verify", "run an experiment and its acceptance gates");
  verify->add_option("config", verify_config, "experiment config file")->required();
  verify->add_option("--jobs", verify_jobs, "worker threads");

  std::string raw_path;
  std::string metric = "max_risk";
  std::string plot_out = "-";
  CLI::App* show = app.add_subcommand("show", "regenerate a plot from raw.csv");
  show->add_option("raw", raw_path, "raw.csv path")->required();
  show->add_option("--metric", metric, "metric column to plot")
      ->check(CLI::IsMember({"max_risk", "success", "n_min", "gamma"}));
  show->add_option("--out", plot_out, "SVG output path, '-' for stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return run_command(config_path, out_dir, seed, jobs, format);
    if (verify->parsed()) return verify_command(verify_config, verify_jobs);
    if (show->parsed()) return show_command(raw_path, metric, plot_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
