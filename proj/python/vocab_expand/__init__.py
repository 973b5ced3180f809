"""Markov-chain vocabulary expansion toolkit.

Thin re-export of the compiled extension: zero-forgetting state-space
expansion, synthetic clustered worlds, one-to-one identification, sparse
coefficient estimation, embedding tuning, higher-order lifts, and the
experiment harness.
"""

from ._core import (
    ChainSpec,
    Dataset,
    EmbeddingMatrix,
    EmpiricalDistribution,
    ExperimentConfig,
    ExperimentResult,
    FitMethod,
    GroundTruth,
    IdentificationResult,
    KOrderModel,
    LiftedChain,
    LinkFunction,
    MarginReport,
    ProbVector,
    RiskReport,
    SamplingSpec,
    SequenceTable,
    SlopeFit,
    SparseEntry,
    SparseFit,
    SyntheticChain,
    TokenEstimate,
    TokenIdentification,
    TransitionMatrix,
    TuneResult,
    TuneSchedule,
    VerifyReport,
    apply_link,
    build_chain,
    emit_outputs,
    empirical_distributions,
    evaluate_risk,
    expand_state_space,
    fit_loglog_slope,
    fit_sparse_enumeration,
    fit_sparse_greedy,
    generate_dataset,
    identify_one_to_one,
    identify_one_to_one_nll,
    kl_divergence,
    lift_to_first_order,
    load_config,
    one_to_one_truth,
    random_k_order_model,
    run_experiment,
    separation_margin,
    sequence_distribution,
    simulate_walk,
    spearman_rho,
    theorem_sample_size,
    total_variation,
    tune_embedding,
    verify_experiment,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
