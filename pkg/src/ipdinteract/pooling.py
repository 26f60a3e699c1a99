"""Inverse-variance pooling of per-trial estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .distributions import Z_975, chisq_sf, normal_sf

FIXED = "fixed"
RANDOM_DL = "random_DL"


class PoolingError(ValueError):
    pass


@dataclass(frozen=True)
class Contribution:
    label: str
    estimate: float
    se: float
    weight: float  # share of total weight, sums to 1 across contributions


@dataclass(frozen=True)
class PooledResult:
    method: str
    estimate: float
    se: float
    ci_low: float
    ci_high: float
    Q: float
    I2: float
    tau2: float
    p_value: float
    p_Q: float
    k: int
    contributions: tuple[Contribution, ...] = field(default=())

    @property
    def ci(self) -> tuple[float, float]:
        return (self.ci_low, self.ci_high)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "estimate": self.estimate,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "p_value": self.p_value,
            "Q": self.Q,
            "p_Q": self.p_Q,
            "I2": self.I2,
            "tau2": self.tau2,
            "k": self.k,
            "contributions": [
                {"label": c.label, "estimate": c.estimate, "se": c.se, "weight": c.weight} for c in self.contributions
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PooledResult":
        contribs = tuple(Contribution(c["label"], c["estimate"], c["se"], c["weight"]) for c in d["contributions"])
        return cls(
            d["method"], d["estimate"], d["se"], d["ci_low"], d["ci_high"], d["Q"], d["I2"], d["tau2"],
            d["p_value"], d["p_Q"], d["k"], contribs,
        )


def _validate(estimates, ses, labels):
    est = np.asarray(estimates, dtype=float)
    se = np.asarray(ses, dtype=float)
    if est.ndim != 1 or est.shape != se.shape:
        raise PoolingError("estimates and standard errors must be 1-d and equally long")
    if est.size < 2:
        raise PoolingError(f"pooling needs at least 2 estimates, got {est.size}")
    if not np.all(np.isfinite(est)) or not np.all(np.isfinite(se)):
        raise PoolingError("estimates and standard errors must be finite")
    if np.any(se <= 0):
        raise PoolingError("every standard error must be positive")
    if labels is None:
        labels = [str(i + 1) for i in range(est.size)]
    labels = [str(l) for l in labels]
    if len(labels) != est.size:
        raise PoolingError("one label per estimate is required")
    return est, se, labels


def heterogeneity(Q: float, k: int) -> tuple[float, float]:
    """I-squared and the chi-square p-value of Cochran's Q on ``k - 1`` df."""
    if k < 2:
        raise PoolingError("heterogeneity needs k >= 2")
    I2 = max(0.0, (Q - (k - 1)) / Q) if Q > 0 else 0.0
    return I2, chisq_sf(max(Q, 0.0), k - 1)


def _weighted_mean(est, w):
    # offset by the first estimate: identical inputs then pool exactly
    ref = est[0]
    return float(ref + np.sum(w * (est - ref)) / np.sum(w))


def _cochran_q(est, w):
    m = _weighted_mean(est, w)
    return m, max(0.0, float(np.sum(w * (est - m) ** 2)))


def _result(method, est, se, w, labels, Q, tau2):
    total = float(np.sum(w))
    m = _weighted_mean(est, w)
    s = 1.0 / math.sqrt(total)
    I2, p_Q = heterogeneity(Q, est.size)
    shares = w / total
    contribs = tuple(Contribution(l, float(e), float(x), float(f)) for l, e, x, f in zip(labels, est, se, shares))
    return PooledResult(
        method, m, s, m - Z_975 * s, m + Z_975 * s, Q, I2, tau2,
        min(1.0, 2.0 * normal_sf(abs(m / s))), p_Q, int(est.size), contribs,
    )


def pool_fixed(estimates: Sequence[float], ses: Sequence[float], labels: Sequence[str] | None = None) -> PooledResult:
    """Fixed-effect inverse-variance pooling with weights ``1 / se**2``."""
    est, se, labels = _validate(estimates, ses, labels)
    w = 1.0 / se**2
    _, Q = _cochran_q(est, w)
    return _result(FIXED, est, se, w, labels, Q, 0.0)


def dl_tau2(estimates, ses) -> float:
    """DerSimonian-Laird moment estimate of between-trial variance, truncated at 0."""
    est, se, _ = _validate(estimates, ses, None)
    w = 1.0 / se**2
    _, Q = _cochran_q(est, w)
    C = float(np.sum(w) - np.sum(w**2) / np.sum(w))
    if C <= 0:
        return 0.0
    return max(0.0, (Q - (est.size - 1)) / C)


def pool_random_dl(estimates: Sequence[float], ses: Sequence[float], labels: Sequence[str] | None = None) -> PooledResult:
    """DerSimonian-Laird random-effects pooling.

    Q and I2 refer to the fixed-effect weights; the pooled estimate and its
    standard error use the re-weighted ``1 / (se**2 + tau2)``.
    """
    est, se, labels = _validate(estimates, ses, labels)
    w = 1.0 / se**2
    _, Q = _cochran_q(est, w)
    tau2 = dl_tau2(est, se)
    if tau2 == 0.0:
        return _result(RANDOM_DL, est, se, w, labels, Q, 0.0)
    return _result(RANDOM_DL, est, se, 1.0 / (se**2 + tau2), labels, Q, tau2)


def pool(estimates, ses, labels=None, method: str = FIXED) -> PooledResult:
    if method in (FIXED, "fe"):
        return pool_fixed(estimates, ses, labels)
    if method in (RANDOM_DL, "dl", "random"):
        return pool_random_dl(estimates, ses, labels)
    raise PoolingError(f"unknown pooling method {method!r}")


@dataclass(frozen=True)
class ForestRow:
    label: str
    estimate: float
    ci_low: float
    ci_high: float
    weight_pct: float


@dataclass(frozen=True)
class ForestData:
    rows: tuple[ForestRow, ...]
    diamond: ForestRow
    method: str
    title: str = ""


def forest_data(result: PooledResult, labels: Sequence[str] | None = None, title: str = "") -> ForestData:
    """Per-trial rows (ordered by label) plus the pooled diamond."""
    contribs = list(result.contributions)
    if labels is not None:
        if len(labels) != len(contribs):
            raise PoolingError("one label per contribution is required")
        contribs = [Contribution(str(l), c.estimate, c.se, c.weight) for l, c in zip(labels, contribs)]
    contribs.sort(key=lambda c: c.label)
    rows = tuple(
        ForestRow(c.label, c.estimate, c.estimate - Z_975 * c.se, c.estimate + Z_975 * c.se, 100.0 * c.weight)
        for c in contribs
    )
    name = "Overall (fixed)" if result.method == FIXED else "Overall (random, DL)"
    diamond = ForestRow(name, result.estimate, result.ci_low, result.ci_high, 100.0)
    return ForestData(rows, diamond, result.method, title)
