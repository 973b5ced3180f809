import math

import pytest

import vocab_expand as vx


def test_kl_divergence_basics():
    p = vx.ProbVector([1.0, 0.0])
    q = vx.ProbVector([0.5, 0.5])
    assert vx.kl_divergence(p, p) == 0.0
    assert vx.kl_divergence(p, q) == pytest.approx(math.log(2.0))


def test_expansion_preserves_original_rows():
    rows = [
        vx.ProbVector([0.2, 0.8, 0.0]),
        vx.ProbVector([0.5, 0.25, 0.25]),
        vx.ProbVector([0.0, 0.0, 1.0]),
    ]
    base = vx.TransitionMatrix.from_rows(rows)
    expanded = vx.expand_state_space(base, [vx.ProbVector([0.1, 0.3, 0.6])])
    assert expanded.source_count == 4
    assert expanded.target_count == 3
    assert expanded.new_count == 1
    for v in range(3):
        assert expanded.row(v).entries == rows[v].entries
    assert expanded.row(3).entries == [0.1, 0.3, 0.6]


def test_identification_pipeline():
    spec = vx.ChainSpec()
    spec.T = 12
    spec.d = 4
    spec.m = 2
    spec.s = 1
    spec.cluster_count = 4
    spec.floor_c = 1e-3
    spec.min_gamma = 0.05
    spec.seed = 7
    chain = vx.build_chain(spec)
    assert chain.matrix.new_count == 2
    assert chain.margin.gamma >= 0.05

    sampling = vx.SamplingSpec()
    sampling.seed = 7
    data = vx.generate_dataset(chain.matrix, sampling, 4000)
    stats = vx.empirical_distributions(data)
    assert stats.n_min > 0

    result = vx.identify_one_to_one(stats, chain.matrix, chain.truth)
    assert result.all_succeeded()


def test_sparse_fit_and_risk():
    spec = vx.ChainSpec()
    spec.T = 10
    spec.d = 4
    spec.m = 1
    spec.s = 2
    spec.cluster_count = 5
    spec.floor_c = 1e-12
    spec.seed = 21
    chain = vx.build_chain(spec)

    q_star = chain.truth.q_star[0]
    fit = vx.fit_sparse_greedy(q_star, chain.embedding, chain.link, 2, 3.0)
    oracle = vx.fit_sparse_enumeration(q_star, chain.embedding, chain.link, 2, 3.0)
    assert fit.objective_value <= oracle.objective_value + 1e-12
    assert len(fit.alpha_hat) <= 2
    norm = math.sqrt(sum(e.value**2 for e in fit.alpha_hat))
    assert norm <= 3.0 + 1e-10

    report = vx.evaluate_risk([fit], chain.truth, chain.embedding, chain.link)
    assert report.max_risk < 1e-4


def test_higher_order_lift_matches_direct_law():
    model = vx.random_k_order_model(3, 2, 2, seed=5)
    lifted = vx.lift_to_first_order(model)
    assert lifted.vocab_T == 3
    table = vx.sequence_distribution(model, 4)
    assert vx.total_variation(table.direct, table.lifted) <= 1e-12


def test_harness_round_trip(tmp_path):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(
        "\n".join(
            [
                "experiment = identify",
                "T = 10",
                "d = 4",
                "m = 2",
                "N = 400",
                "N = 800",
                "replications = 2",
                "seed = 13",
                f"output_dir = {tmp_path / 'out'}",
            ]
        )
        + "\n"
    )
    config = vx.load_config(str(cfg))
    result = vx.run_experiment(config, jobs=2)
    assert result.trial_count == 4
    assert result.failed_trials == 0
    paths = vx.emit_outputs(result, config)
    assert any(p.endswith("raw.csv") for p in paths)
