#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "vocab_expand/chain.hpp"
#include "vocab_expand/estimators.hpp"
#include "vocab_expand/harness.hpp"
#include "vocab_expand/higher_order.hpp"
#include "vocab_expand/rng.hpp"
#include "vocab_expand/sampler.hpp"
#include "vocab_expand/synth_model.hpp"

namespace py = pybind11;
using namespace vexp;

PYBIND11_MODULE(_core, mod) {
  mod.doc() =
      "Markov-chain vocabulary expansion: zero-forgetting state-space "
      "expansion, synthetic clustered worlds, sparse estimators, embedding "
      "tuning, and the experiment harness.";

  // ---------------------------------------------------------------- chain
  py::class_<ProbVector>(mod, "ProbVector")
      .def(py::init<std::vector<double>>(), py::arg("entries"))
      .def("__len__", &ProbVector::size)
      .def("__getitem__",
           [](const ProbVector& p, std::int32_t i) {
             if (i < 0 || i >= p.size()) throw py::index_error();
             return p[i];
           })
      .def_property_readonly("entries", &ProbVector::entries)
      .def("support", &ProbVector::support);

  py::class_<TransitionMatrix>(mod, "TransitionMatrix")
      .def(py::init<std::vector<ProbVector>, std::int32_t>(), py::arg("rows"),
           py::arg("target_count"))
      .def_static("from_rows", &TransitionMatrix::from_rows, py::arg("rows"))
      .def_property_readonly("source_count", &TransitionMatrix::source_count)
      .def_property_readonly("target_count", &TransitionMatrix::target_count)
      .def_property_readonly("new_count", &TransitionMatrix::new_count)
      .def("row", &TransitionMatrix::row, py::arg("v"),
           py::return_value_policy::reference_internal)
      .def_property_readonly("rows", &TransitionMatrix::rows);

  py::class_<MarginReport>(mod, "MarginReport")
      .def_readonly("gamma", &MarginReport::gamma)
      .def_readonly("arg_i", &MarginReport::arg_i)
      .def_readonly("arg_j", &MarginReport::arg_j)
      .def_readonly("finite", &MarginReport::finite);

  mod.def("kl_divergence",
          py::overload_cast<const ProbVector&, const ProbVector&>(
              &kl_divergence),
          py::arg("p"), py::arg("q"));
  mod.def("separation_margin", &separation_margin, py::arg("P"));
  mod.def("expand_state_space", &expand_state_space, py::arg("P"),
          py::arg("new_rows"));
  mod.def(
      "simulate_walk",
      [](const TransitionMatrix& P, TokenId start, std::int64_t length,
         std::uint64_t seed) {
        Rng rng(seed);
        return simulate_walk(P, start, length, rng);
      },
      py::arg("P"), py::arg("start"), py::arg("length"), py::arg("seed"));

  // ---------------------------------------------------------- synth model
  py::class_<EmbeddingMatrix>(mod, "EmbeddingMatrix")
      .def(py::init<Eigen::MatrixXd>(), py::arg("entries"))
      .def_property_readonly("vocab", &EmbeddingMatrix::vocab)
      .def_property_readonly("dim", &EmbeddingMatrix::dim)
      .def_property_readonly(
          "entries",
          [](const EmbeddingMatrix& e) -> Eigen::MatrixXd { return e.entries(); })
      .def_property_readonly("max_singular_value",
                             &EmbeddingMatrix::max_singular_value);

  py::class_<LinkFunction>(mod, "LinkFunction")
      .def(py::init([](double temperature, double floor_c) {
             return LinkFunction{temperature, floor_c};
           }),
           py::arg("temperature") = 1.0, py::arg("floor_c") = 1e-3)
      .def_readwrite("temperature", &LinkFunction::temperature)
      .def_readwrite("floor_c", &LinkFunction::floor_c);

  py::class_<SparseEntry>(mod, "SparseEntry")
      .def(py::init([](TokenId index, double value) {
             return SparseEntry{index, value};
           }),
           py::arg("index"), py::arg("value"))
      .def_readwrite("index", &SparseEntry::index)
      .def_readwrite("value", &SparseEntry::value)
      .def("__repr__", [](const SparseEntry& e) {
        std::ostringstream os;
        os << "SparseEntry(" << e.index << ", " << e.value << ")";
        return os.str();
      });

  py::class_<GroundTruth>(mod, "GroundTruth")
      .def_readonly("alpha_star", &GroundTruth::alpha_star)
      .def_readonly("sparsity_s", &GroundTruth::sparsity_s)
      .def_readonly("norm_bound_B", &GroundTruth::norm_bound_B)
      .def_readonly("q_star", &GroundTruth::q_star)
      .def("v_star", &GroundTruth::v_star, py::arg("u"));

  py::class_<ChainSpec>(mod, "ChainSpec")
      .def(py::init<>())
      .def_readwrite("T", &ChainSpec::T)
      .def_readwrite("d", &ChainSpec::d)
      .def_readwrite("m", &ChainSpec::m)
      .def_readwrite("s", &ChainSpec::s)
      .def_readwrite("cluster_count", &ChainSpec::cluster_count)
      .def_readwrite("floor_c", &ChainSpec::floor_c)
      .def_readwrite("temperature", &ChainSpec::temperature)
      .def_readwrite("min_gamma", &ChainSpec::min_gamma)
      .def_readwrite("norm_bound_B", &ChainSpec::norm_bound_B)
      .def_readwrite("seed", &ChainSpec::seed)
      .def("validate", &ChainSpec::validate);

  py::class_<SyntheticChain>(mod, "SyntheticChain")
      .def_readonly("embedding", &SyntheticChain::embedding)
      .def_readonly("link", &SyntheticChain::link)
      .def_readonly("matrix", &SyntheticChain::matrix)
      .def_readonly("truth", &SyntheticChain::truth)
      .def_readonly("margin", &SyntheticChain::margin)
      .def_readonly("cluster_of", &SyntheticChain::cluster_of)
      .def_readonly("rejected_attempts", &SyntheticChain::rejected_attempts);

  mod.def("build_chain",
          py::overload_cast<const ChainSpec&>(&build_chain), py::arg("spec"),
          py::call_guard<py::gil_scoped_release>());
  mod.def("apply_link", &apply_link, py::arg("f"), py::arg("E"),
          py::arg("alpha"));
  mod.def("one_to_one_truth",
          [](const TransitionMatrix& P, std::int32_t m, std::uint64_t seed) {
            Rng rng(seed);
            return one_to_one_truth(P, m, rng);
          },
          py::arg("P"), py::arg("m"), py::arg("seed"));

  // -------------------------------------------------------------- sampler
  py::class_<SamplingSpec>(mod, "SamplingSpec")
      .def(py::init<>())
      .def_readwrite("prefix_len", &SamplingSpec::prefix_len)
      .def_readwrite("suffix_len", &SamplingSpec::suffix_len)
      .def_readwrite("occurrences_per_sequence",
                     &SamplingSpec::occurrences_per_sequence)
      .def_readwrite("allow_v_to_u", &SamplingSpec::allow_v_to_u)
      .def_readwrite("v_to_u_leak", &SamplingSpec::v_to_u_leak)
      .def_readwrite("seed", &SamplingSpec::seed)
      .def("validate", &SamplingSpec::validate);

  py::class_<Dataset>(mod, "Dataset")
      .def("__len__", &Dataset::size)
      .def("sequence", &Dataset::sequence, py::arg("i"))
      .def_property_readonly("vocab", &Dataset::vocab)
      .def_property_readonly("new_count", &Dataset::new_count)
      .def_property_readonly("seed", &Dataset::seed);

  py::class_<TokenEstimate>(mod, "TokenEstimate")
      .def_readonly("count", &TokenEstimate::count)
      .def_readonly("has_estimate", &TokenEstimate::has_estimate)
      .def_readonly("q_hat", &TokenEstimate::q_hat);

  py::class_<EmpiricalDistribution>(mod, "EmpiricalDistribution")
      .def_readonly("per_token", &EmpiricalDistribution::per_token)
      .def_readonly("n_min", &EmpiricalDistribution::n_min);

  mod.def("generate_dataset",
          py::overload_cast<const TransitionMatrix&, const SamplingSpec&,
                            std::int64_t>(&generate_dataset),
          py::arg("P_expanded"), py::arg("spec"), py::arg("N"),
          py::call_guard<py::gil_scoped_release>());
  mod.def("empirical_distributions", &empirical_distributions, py::arg("D"));

  // ----------------------------------------------------------- estimators
  py::class_<TokenIdentification>(mod, "TokenIdentification")
      .def_readonly("identified", &TokenIdentification::identified)
      .def_readonly("v_hat", &TokenIdentification::v_hat)
      .def_readonly("kl_to_best", &TokenIdentification::kl_to_best)
      .def_readonly("candidate_set_size",
                    &TokenIdentification::candidate_set_size)
      .def_readonly("success", &TokenIdentification::success);

  py::class_<IdentificationResult>(mod, "IdentificationResult")
      .def_readonly("per_token", &IdentificationResult::per_token)
      .def("success_count", &IdentificationResult::success_count)
      .def("all_succeeded", &IdentificationResult::all_succeeded);

  mod.def("identify_one_to_one", &identify_one_to_one, py::arg("stats"),
          py::arg("P"), py::arg("truth") = nullptr);
  mod.def("identify_one_to_one_nll", &identify_one_to_one_nll, py::arg("D"),
          py::arg("P"), py::arg("truth") = nullptr);

  py::enum_<FitMethod>(mod, "FitMethod")
      .value("ENUMERATION", FitMethod::kEnumeration)
      .value("GREEDY_PG", FitMethod::kGreedyPg);

  py::class_<SparseFit>(mod, "SparseFit")
      .def_readonly("alpha_hat", &SparseFit::alpha_hat)
      .def_readonly("objective_value", &SparseFit::objective_value)
      .def_readonly("method", &SparseFit::method)
      .def_readonly("converged", &SparseFit::converged);

  mod.def("fit_sparse_enumeration", &fit_sparse_enumeration, py::arg("q_hat"),
          py::arg("E"), py::arg("f"), py::arg("s"), py::arg("B"),
          py::call_guard<py::gil_scoped_release>());
  mod.def("fit_sparse_greedy", &fit_sparse_greedy, py::arg("q_hat"),
          py::arg("E"), py::arg("f"), py::arg("s"), py::arg("B"),
          py::call_guard<py::gil_scoped_release>());

  py::class_<RiskReport>(mod, "RiskReport")
      .def_readonly("per_token", &RiskReport::per_token)
      .def_readonly("max_risk", &RiskReport::max_risk);

  mod.def("evaluate_risk", &evaluate_risk, py::arg("fits"), py::arg("truth"),
          py::arg("E"), py::arg("f"));

  py::class_<TuneSchedule>(mod, "TuneSchedule")
      .def(py::init([](double initial_lr, double decay) {
             return TuneSchedule{initial_lr, decay};
           }),
           py::arg("initial_lr") = 0.0, py::arg("decay") = 0.0)
      .def_readwrite("initial_lr", &TuneSchedule::initial_lr)
      .def_readwrite("decay", &TuneSchedule::decay);

  py::class_<TuneResult>(mod, "TuneResult")
      .def_readonly("embedding", &TuneResult::embedding)
      .def_readonly("final_kl", &TuneResult::final_kl)
      .def_readonly("smooth_kl", &TuneResult::smooth_kl)
      .def_readonly("steps_run", &TuneResult::steps_run);

  mod.def("tune_embedding", &tune_embedding, py::arg("q_hat"), py::arg("E"),
          py::arg("f"), py::arg("init"), py::arg("steps"),
          py::arg("schedule") = TuneSchedule{},
          py::call_guard<py::gil_scoped_release>());

  // ---------------------------------------------------------- higher order
  py::class_<KOrderModel>(mod, "KOrderModel")
      .def_property_readonly("order", &KOrderModel::order)
      .def_property_readonly("vocab", &KOrderModel::vocab)
      .def_property_readonly("branching", &KOrderModel::branching)
      .def_property_readonly("row_count", &KOrderModel::row_count);

  py::class_<LiftedChain>(mod, "LiftedChain")
      .def_readonly("matrix", &LiftedChain::matrix)
      .def_readonly("states", &LiftedChain::states)
      .def_readonly("order_K", &LiftedChain::order_K)
      .def_readonly("vocab_T", &LiftedChain::vocab_T);

  py::class_<SequenceTable>(mod, "SequenceTable")
      .def_readonly("vocab_T", &SequenceTable::vocab_T)
      .def_readonly("length", &SequenceTable::length)
      .def_readonly("direct", &SequenceTable::direct)
      .def_readonly("lifted", &SequenceTable::lifted);

  mod.def("random_k_order_model",
          [](std::int32_t T, std::int32_t K, std::int32_t b,
             std::uint64_t seed) {
            Rng rng(seed);
            return random_k_order_model(T, K, b, rng);
          },
          py::arg("T"), py::arg("K"), py::arg("b"), py::arg("seed"));
  mod.def("lift_to_first_order", &lift_to_first_order, py::arg("model"));
  mod.def("sequence_distribution", &sequence_distribution, py::arg("model"),
          py::arg("length"), py::call_guard<py::gil_scoped_release>());
  mod.def("total_variation", &total_variation, py::arg("a"), py::arg("b"));

  // -------------------------------------------------------------- harness
  py::class_<SlopeFit>(mod, "SlopeFit")
      .def_readonly("slope", &SlopeFit::slope)
      .def_readonly("std_error", &SlopeFit::std_error)
      .def_readonly("points", &SlopeFit::points);

  py::class_<ExperimentConfig>(mod, "ExperimentConfig")
      .def_readonly("replications", &ExperimentConfig::replications)
      .def_readonly("output_dir", &ExperimentConfig::output_dir)
      .def_readonly("master_seed", &ExperimentConfig::master_seed);

  py::class_<ExperimentResult>(mod, "ExperimentResult")
      .def_readonly("failed_trials", &ExperimentResult::failed_trials)
      .def_readonly("jobs_used", &ExperimentResult::jobs_used)
      .def_property_readonly("trial_count", [](const ExperimentResult& r) {
        return static_cast<std::int64_t>(r.rows.size());
      });

  py::class_<VerifyReport>(mod, "VerifyReport")
      .def_property_readonly("lines",
                             [](const VerifyReport& r) {
                               std::vector<std::pair<std::string, bool>> out;
                               for (const auto& line : r.lines)
                                 out.emplace_back(line.label, line.pass);
                               return out;
                             })
      .def("passed", &VerifyReport::passed);

  mod.def("load_config", &load_config, py::arg("path"));
  mod.def("run_experiment", &run_experiment, py::arg("config"),
          py::arg("jobs") = 1, py::call_guard<py::gil_scoped_release>());
  mod.def("emit_outputs", &emit_outputs, py::arg("result"), py::arg("config"),
          py::arg("format") = "csv");
  mod.def("fit_loglog_slope", &fit_loglog_slope, py::arg("result"),
          py::arg("x_field"), py::arg("y_field"));
  mod.def("spearman_rho", &spearman_rho, py::arg("x"), py::arg("y"));
  mod.def("verify_experiment", &verify_experiment, py::arg("config"),
          py::arg("result"));
  mod.def("theorem_sample_size", &theorem_sample_size, py::arg("T"),
          py::arg("m"), py::arg("gamma"), py::arg("c"), py::arg("delta"));
}
