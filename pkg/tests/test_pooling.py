import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ipdinteract.pooling import (
    PooledResult,
    PoolingError,
    forest_data,
    heterogeneity,
    pool_fixed,
    pool_random_dl,
)

estimates = st.lists(st.floats(-50, 50), min_size=2, max_size=8)


def test_fixed_two_trials():
    r = pool_fixed([2, 4], [1, 1])
    assert r.estimate == pytest.approx(3.0, abs=1e-12)
    assert r.se == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    assert r.Q == pytest.approx(2.0, abs=1e-12)
    assert r.tau2 == 0.0


def test_fixed_identical_entries():
    r = pool_fixed([1.5] * 4, [2.0] * 4)
    assert r.estimate == pytest.approx(1.5)
    assert r.se == pytest.approx(2.0 / 2)
    assert r.Q == pytest.approx(0.0, abs=1e-20)


def test_fixed_unequal_se():
    r = pool_fixed([0, 0], [1, 2])
    assert r.estimate == 0.0
    assert r.se == pytest.approx((1 + 0.25) ** -0.5, abs=1e-12)
    assert r.se == pytest.approx(0.8944, abs=1e-4)


def test_dl_two_trials():
    r = pool_random_dl([2, 4], [1, 1])
    assert r.tau2 == pytest.approx(1.0, abs=1e-12)
    assert r.estimate == pytest.approx(3.0)
    assert r.se == pytest.approx(1.0, abs=1e-12)


def test_dl_large_spread():
    r = pool_random_dl([0, 10], [1, 1])
    assert r.tau2 == pytest.approx(49.0)
    assert r.estimate == pytest.approx(5.0)


def test_dl_homogeneous_equals_fixed():
    a, b = pool_fixed([1, 1.2, 0.9], [1, 1, 1]), pool_random_dl([1, 1.2, 0.9], [1, 1, 1])
    assert b.tau2 == 0.0  # Q = 0.05 < k - 1
    assert (a.estimate, a.se) == (b.estimate, b.se)


def test_heterogeneity_examples():
    assert heterogeneity(2, 2)[0] == pytest.approx(0.5)
    assert heterogeneity(0, 5) == (0.0, 1.0)
    assert heterogeneity(1, 5)[0] == 0.0


def test_errors():
    with pytest.raises(PoolingError):
        pool_fixed([1], [1])
    with pytest.raises(PoolingError):
        pool_fixed([1, 2], [1, 0])
    with pytest.raises(PoolingError):
        pool_random_dl([1, 2], [-1, 1])


def test_forest_rows_and_weights():
    r = pool_fixed([1, 2, 3, 4, 5], [1, 0.5, 2, 1, 0.8], ["T5", "T1", "T3", "T2", "T4"])
    f = forest_data(r)
    assert [row.label for row in f.rows] == ["T1", "T2", "T3", "T4", "T5"]
    assert sum(row.weight_pct for row in f.rows) == pytest.approx(100.0, abs=0.01)
    assert f.diamond.estimate == r.estimate


def test_forest_equal_se_even_split():
    f = forest_data(pool_fixed([1, 3], [1, 1]))
    assert [row.weight_pct for row in f.rows] == pytest.approx([50.0, 50.0])


def test_forest_weight_ratio_inverse_square():
    f = forest_data(pool_fixed([1, 3], [1, 10], ["a", "b"]))
    assert f.rows[0].weight_pct / f.rows[1].weight_pct == pytest.approx(100.0)


def test_round_trip_dict():
    r = pool_random_dl([0, 10, 3], [1, 1, 2], ["a", "b", "c"])
    assert PooledResult.from_dict(r.to_dict()) == r


@settings(max_examples=60, deadline=None)
@given(estimates, st.data())
def test_invariants(est, data):
    ses = data.draw(st.lists(st.floats(0.05, 10), min_size=len(est), max_size=len(est)))
    f, d = pool_fixed(est, ses), pool_random_dl(est, ses)
    for r in (f, d):
        assert sum(c.weight for c in r.contributions) == pytest.approx(1.0, abs=1e-10)
        assert r.Q >= 0 and 0 <= r.I2 <= 1 and r.tau2 >= 0
        assert r.ci_low <= r.estimate <= r.ci_high
    assert f.tau2 == 0
    assert d.se >= f.se * (1 - 1e-12)


@settings(max_examples=40, deadline=None)
@given(estimates, st.floats(0.1, 20), st.data())
def test_scale_equivariance(est, c, data):
    ses = data.draw(st.lists(st.floats(0.1, 5), min_size=len(est), max_size=len(est)))
    for fn in (pool_fixed, pool_random_dl):
        a = fn(est, ses)
        b = fn([c * e for e in est], [c * s for s in ses])
        assert b.estimate == pytest.approx(c * a.estimate, rel=1e-9, abs=1e-9)
        assert b.se == pytest.approx(c * a.se, rel=1e-9)
        assert b.Q == pytest.approx(a.Q, rel=1e-8, abs=1e-9)
        assert b.I2 == pytest.approx(a.I2, abs=1e-8)
        assert b.tau2 == pytest.approx(c * c * a.tau2, rel=1e-8, abs=1e-9)
        for x, y in zip(a.contributions, b.contributions):
            assert y.weight == pytest.approx(x.weight, rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(estimates, st.data())
def test_permutation_invariance(est, data):
    ses = data.draw(st.lists(st.floats(0.1, 5), min_size=len(est), max_size=len(est)))
    labels = [f"t{i}" for i in range(len(est))]
    perm = data.draw(st.permutations(range(len(est))))
    a = pool_random_dl(est, ses, labels)
    b = pool_random_dl([est[i] for i in perm], [ses[i] for i in perm], [labels[i] for i in perm])
    assert b.estimate == pytest.approx(a.estimate, rel=1e-12, abs=1e-12)
    assert b.se == pytest.approx(a.se, rel=1e-12)
    assert {c.label: c.weight for c in b.contributions} == pytest.approx({c.label: c.weight for c in a.contributions})


@pytest.mark.parametrize("seed", range(10))
def test_fixed_matches_grid_minimiser(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 5))
    est, ses = rng.normal(0, 3, k), rng.uniform(0.2, 2, k)
    w = 1 / ses**2
    grid = np.linspace(est.min(), est.max(), 20001)
    m = grid[np.argmin(((est[None, :] - grid[:, None]) ** 2 * w).sum(axis=1))]
    # refine around the coarse minimum
    fine = np.linspace(m - 1e-3, m + 1e-3, 20001)
    m = fine[np.argmin(((est[None, :] - fine[:, None]) ** 2 * w).sum(axis=1))]
    assert pool_fixed(est, ses).estimate == pytest.approx(m, abs=1e-6)
