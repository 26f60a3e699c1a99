import numpy as np
import pytest

from ipdinteract.dataset import correlation, emit_csv
from ipdinteract.exemplar import (
    BiasDemoConfig,
    ConfigError,
    ExemplarConfig,
    Target,
    aggregation_bias_demo,
    compare_approaches,
    generate_exemplar,
    replicate,
    replication_seeds,
)
from ipdinteract.models import ModelSpec


def test_default_config_file_matches_dataclass_defaults():
    assert ExemplarConfig.default() == ExemplarConfig()


def test_default_config_constraints(exemplar_config):
    exemplar_config.check_design()
    assert exemplar_config.g2 == 0 and exemplar_config.g3 == 0
    assert exemplar_config.implied_correlation() == pytest.approx(-0.31, abs=1e-3)


def test_ini_round_trip(exemplar_config):
    assert ExemplarConfig.from_ini(exemplar_config.to_ini()) == exemplar_config


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="bogus"):
        ExemplarConfig.from_ini("[exemplar]\nbogus = 1\n")


def test_exemplar_characteristics(exemplar, exemplar_config):
    assert exemplar.n == 3200 and len(exemplar.trials) == 5
    assert -0.36 <= correlation(exemplar, "cov1", "cov2") <= -0.26
    assert exemplar.outcome.min() >= 0 and exemplar.outcome.max() <= 50
    # >= 99.9% of first draws fall inside the bounds
    assert generate_exemplar(exemplar_config).rejections <= 0.001 * 3200
    for t, rows in exemplar.trial_index.items():
        x = exemplar.treatment[rows]
        assert abs(x.sum() - (rows.size - x.sum())) <= 1


def test_same_seed_same_bytes(exemplar_config):
    a = emit_csv(generate_exemplar(exemplar_config).dataset)
    b = emit_csv(generate_exemplar(exemplar_config).dataset)
    assert a == b
    c = emit_csv(generate_exemplar(exemplar_config.replace(seed=1)).dataset)
    assert a != c


def test_independent_covariates_are_uncorrelated(exemplar_config):
    cfg = exemplar_config.replace(joint_cov_probs=(0.36, 0.24, 0.24, 0.16))
    assert cfg.implied_correlation() == pytest.approx(0.0, abs=1e-12)
    assert abs(correlation(generate_exemplar(cfg).dataset, "cov1", "cov2")) < 0.04


def test_infeasible_bounds(exemplar_config):
    with pytest.raises(ConfigError, match="infeasible"):
        generate_exemplar(exemplar_config.replace(outcome_bounds=(24.0, 26.0)))


def test_comparison_pattern(exemplar):
    c = compare_approaches(exemplar)
    assert len(c.rows) == 7
    assert all(c.p("cov1", a) < 0.05 for a in (1, 2, 3))
    assert c.p("cov2", 1) < c.p("cov2", 2) < c.p("cov2", 3)
    assert c.p("cov2", 3) > 0.05
    assert c.three_way.p_value > 0.05
    # negative correlation flips the sign of the borrowed interaction
    assert np.sign(c.row("cov2", 1).estimate) == -np.sign(c.row("cov1", 1).estimate)


def test_bias_demo_seed7():
    r = aggregation_bias_demo(7)
    assert r.within_covers_zero and r.conflated_significant
    assert r.conflated["p_value"] < 0.05
    assert r.observed_across_slope == pytest.approx(r.planted_across_slope, rel=0.05)
    assert aggregation_bias_demo(7).to_dict() == r.to_dict()


def test_bias_demo_without_gradient():
    r = aggregation_bias_demo(7, BiasDemoConfig(across_slope=0.0))
    assert abs(r.within["estimate"] - r.conflated["estimate"]) <= 2 * r.within["se"]


def test_replication_seeds_deterministic():
    assert replication_seeds(5, 4) == replication_seeds(5, 4)
    assert replication_seeds(5, 4)[:2] == replication_seeds(5, 2)
    assert len(set(replication_seeds(5, 100))) == 100


@pytest.fixture(scope="module")
def reps500(exemplar_config):
    return replicate(exemplar_config, 500)


def test_replicate_unbiased_a3(reps500):
    row = reps500.row("A3:cov1|cov2", "gamma1")
    assert abs(row.mean_estimate - row.truth) <= 0.05 * row.empirical_se


def test_replicate_type1_a3(reps500):
    assert 0.03 <= reps500.row("A3:cov1|cov2", "gamma2").rejection_rate <= 0.07


def test_replicate_confounded_power(reps500):
    assert reps500.row("A1:cov2", "gamma").rejection_rate > 0.5


def test_three_way_null_centered(reps500):
    # standardized gamma3 estimates behave like N(0, 1)
    est = reps500.estimates[("A4:cov2*cov1", "gamma3")]
    row = reps500.row("A4:cov2*cov1", "gamma3")
    zs = est / row.mean_model_se
    assert abs(zs.mean()) < 3 / np.sqrt(zs.size)
    assert np.mean(np.abs(zs)) == pytest.approx(np.sqrt(2 / np.pi), abs=0.08)


def test_replicate_order_independent(exemplar_config):
    from ipdinteract.exemplar import default_targets

    targets = default_targets(exemplar_config)
    a = replicate(exemplar_config, 6, targets)
    b = replicate(exemplar_config, 6, list(reversed(targets)))
    for t in targets:
        assert a.row(t.estimator, t.role) == b.row(t.estimator, t.role)


def test_replicate_rejects_zero_reps(exemplar_config):
    with pytest.raises(ValueError):
        replicate(exemplar_config, 0)
