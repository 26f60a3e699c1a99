import io

import numpy as np
import pytest

from ipdinteract.dataset import IpdDataset, emit_csv
from ipdinteract.exemplar import ExemplarConfig, generate_exemplar

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def exemplar_config():
    return ExemplarConfig.default()


@pytest.fixture(scope="session")
def exemplar(exemplar_config):
    return generate_exemplar(exemplar_config).dataset


@pytest.fixture(scope="session")
def exemplar_csv(exemplar, tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "exemplar.csv"
    path.write_text(emit_csv(exemplar), encoding="utf-8")
    return path


def make_dataset(trials, treatment, outcome, **covariates):
    return IpdDataset(
        np.asarray(trials, dtype=str),
        np.asarray(treatment),
        np.asarray(outcome, dtype=float),
        {k: np.asarray(v, dtype=float) for k, v in covariates.items()},
        {k: None for k in covariates},
    )


def random_trials(seed, k=4, n=120, gamma=1.0, continuous=True):
    """Small multi-trial dataset with one true interaction on ``z``."""
    rng = np.random.default_rng(seed)
    t, x, y, z, w = [], [], [], [], []
    for i in range(k):
        xi = rng.permutation(np.r_[np.ones(n // 2), np.zeros(n - n // 2)])
        zi = rng.normal(i * 0.5, 1.0, n) if continuous else rng.integers(0, 2, n).astype(float)
        wi = rng.normal(0.0, 1.0, n) + 0.3 * zi
        yi = 10 + i + 0.7 * zi + 0.4 * wi - 2 * xi + gamma * xi * zi + rng.normal(0, 1, n)
        t += [f"S{i}"] * n
        x.append(xi); y.append(yi); z.append(zi); w.append(wi)
    return make_dataset(t, np.concatenate(x).astype(int), np.concatenate(y), z=np.concatenate(z), w=np.concatenate(w))
