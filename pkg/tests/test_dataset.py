import io
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ipdinteract.dataset import (
    IpdDataset,
    MissingDataWarning,
    ParseError,
    SchemaError,
    ValidationError,
    center_within_trial,
    correlation,
    emit_csv,
    ingest_csv,
    summarize,
)

from conftest import make_dataset


def test_ingest_exemplar_aliases(exemplar):
    text = emit_csv(exemplar).replace("trial_id,treatment,outcome", "trial,treat,y", 1)
    ds = ingest_csv(text.encode(), ["cov1", "cov2"])
    assert ds.n == 3200
    assert len(ds.trials) == 5
    assert ds.schema == {"cov1": "binary", "cov2": "binary"}


def test_ingest_single_trial():
    ds = ingest_csv(b"trial_id,treatment,outcome,z\nA,0,1.5,0\nA,1,2.5,1\n")
    assert ds.trials == ["A"]
    with pytest.raises(ValidationError, match="fewer than 2 trials"):
        ds.require_meta_analysable()


def test_treatment_out_of_domain_names_row():
    with pytest.raises(ValidationError, match="row 3") as err:
        ingest_csv(b"trial_id,treatment,outcome\nA,0,1\nA,2,1\n")
    assert err.value.row == 3


def test_missing_column():
    with pytest.raises(SchemaError, match="outcome"):
        ingest_csv(b"trial_id,treatment,z\nA,0,1\n")
    with pytest.raises(SchemaError, match="q"):
        ingest_csv(b"trial_id,treatment,outcome\nA,0,1\n", ["q"])


def test_non_numeric_cell():
    with pytest.raises(ParseError, match="row 2") as err:
        ingest_csv(b"trial_id,treatment,outcome,z\nA,0,abc,1\n")
    assert err.value.row == 2


def test_listwise_deletion_warns_and_counts():
    data = b"trial_id,treatment,outcome,z\nA,0,1,0\nA,1,,1\nB,0,3,NA\nB,1,4,1\n"
    with pytest.warns(MissingDataWarning, match="2 row"):
        ds = ingest_csv(data)
    assert ds.n == 2 and ds.n_deleted == 2


def test_multilevel_binary_rejected():
    with pytest.raises(ValidationError):
        ingest_csv(b"trial_id,treatment,outcome,z\nA,0,1,2\n", {"z": "binary"})
    with pytest.raises(SchemaError, match="categorical"):
        ingest_csv(b"trial_id,treatment,outcome,z\nA,0,1,2\n", {"z": "categorical"})


def test_trial_index_partitions_rows_in_lexicographic_order():
    ds = make_dataset(["b", "a", "b", "c", "a"], [0, 1, 1, 0, 0], [1, 2, 3, 4, 5], z=[0, 1, 0, 1, 1])
    assert ds.trials == ["a", "b", "c"]
    rows = np.sort(np.concatenate(list(ds.trial_index.values())))
    np.testing.assert_array_equal(rows, np.arange(5))


def test_dataset_is_immutable(exemplar):
    with pytest.raises(ValueError):
        exemplar.outcome[0] = 1.0
    with pytest.raises(Exception):
        exemplar.n_deleted = 3


def test_centering_examples():
    ds = make_dataset(["a"] * 3, [0, 1, 0], [0, 0, 0], z=[1, 2, 3])
    np.testing.assert_allclose(center_within_trial(ds, "z").values, [-1, 0, 1])
    ds = make_dataset(["a"] * 2, [0, 1], [0, 0], z=[4, 4])
    np.testing.assert_array_equal(center_within_trial(ds, "z").values, [0, 0])
    ds = make_dataset(["a", "a", "b", "b", "b"], [0, 1, 0, 1, 0], [0] * 5, z=[0, 1, 1, 1, 1])
    c = center_within_trial(ds, "z")
    np.testing.assert_allclose(c.values, [-0.5, 0.5, 0, 0, 0])
    assert c.trial_means == {"a": 0.5, "b": 1.0}


def test_centering_unknown_covariate():
    ds = make_dataset(["a"] * 2, [0, 1], [0, 0], z=[1, 2])
    with pytest.raises(SchemaError):
        center_within_trial(ds, "w")


def _trials_and_values():
    return st.integers(1, 5).flatmap(
        lambda k: st.tuples(
            st.lists(st.integers(0, k - 1), min_size=2, max_size=40),
            st.lists(st.floats(-1e3, 1e3), min_size=40, max_size=40),
            st.lists(st.floats(-100, 100), min_size=k, max_size=k),
        )
    )


@settings(max_examples=60, deadline=None)
@given(_trials_and_values())
def test_centering_properties(case):
    trial_nums, vals, shifts = case
    n = len(trial_nums)
    trials = [f"t{i}" for i in trial_nums]
    ds = make_dataset(trials, [j % 2 for j in range(n)], np.zeros(n), z=vals[:n])
    c = center_within_trial(ds, "z")
    for t, rows in ds.trial_index.items():
        assert abs(c.values[rows].mean()) <= 1e-10 * max(1.0, np.abs(ds.covariate("z")[rows]).max())
    # idempotence
    again = center_within_trial(ds.with_covariate("z", c.values), "z")
    np.testing.assert_allclose(again.values, c.values, atol=1e-12 * max(1.0, np.abs(vals).max()))
    # shift equivariance
    shift = np.array([shifts[i] for i in trial_nums])
    moved = center_within_trial(ds.with_covariate("z", ds.covariate("z") + shift), "z")
    np.testing.assert_allclose(moved.values, c.values, atol=1e-12 * 1e4)
    for t in ds.trials:
        assert moved.trial_means[t] == pytest.approx(c.trial_means[t] + shifts[int(t[1:])], abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["A", "B", "T10"]), st.integers(0, 1), st.floats(-1e6, 1e6), st.floats(-1e3, 1e3)), min_size=1, max_size=30))
def test_emit_ingest_round_trip(rows):
    t, x, y, z = zip(*rows)
    ds = make_dataset(t, x, y, z=z)
    back = ingest_csv(emit_csv(ds).encode(), {"z": ds.schema["z"]})
    assert list(back.records()) == list(ds.records())


def test_summary_correlation(exemplar):
    s = summarize(exemplar)
    assert -0.36 <= s["correlation"]["cov1~cov2"] <= -0.26
    assert s["correlation"]["cov1~cov1"] == pytest.approx(1.0)
    assert [t["trial_id"] for t in s["trials"]] == sorted(exemplar.trials)
    assert sum(t["n"] for t in s["trials"]) == 3200
    assert all(t["n_treated"] + t["n_control"] == t["n"] for t in s["trials"])


def test_independent_binary_covariates_uncorrelated():
    rng = np.random.default_rng(2024)
    n = 100_000
    ds = make_dataset(np.repeat(["a", "b"], n // 2), rng.integers(0, 2, n), np.zeros(n),
                      u=rng.integers(0, 2, n), v=rng.integers(0, 2, n))
    assert abs(correlation(ds, "u", "v")) < 0.02


def test_frame_round_trip(exemplar):
    frame = exemplar.to_frame()
    back = IpdDataset.from_frame(frame)
    assert list(back.records())[:50] == list(exemplar.records())[:50]
    assert back.schema == exemplar.schema
