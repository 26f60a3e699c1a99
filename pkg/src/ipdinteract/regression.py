"""Ordinary least squares with coefficient covariance and Wald inference."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from .distributions import Z_975, normal_sf, t_ppf, t_sf

# A pivot below this fraction of the largest one marks a dependent column.
RANK_TOL = 1e-10


class RegressionError(ArithmeticError):
    """Numerical failure in the least-squares engine."""


class RankError(RegressionError):
    def __init__(self, message: str, column: str | None = None):
        super().__init__(message)
        self.column = column


class UnderdeterminedError(RegressionError):
    pass


class DegenerateInferenceError(RegressionError):
    pass


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    column_labels: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("design values must be a 2-d array")
        labels = tuple(self.column_labels)
        if len(labels) != values.shape[1]:
            raise ValueError(f"{len(labels)} labels for {values.shape[1]} columns")
        if len(set(labels)) != len(labels):
            raise ValueError("column labels must be unique")
        object.__setattr__(self, "column_labels", labels)
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def column(self, label: str) -> np.ndarray:
        return self.values[:, self.column_labels.index(label)]


@dataclass(frozen=True, eq=False)
class FitResult:
    labels: tuple[str, ...]
    coefficients: np.ndarray
    vcov: np.ndarray
    sigma2: float
    dof: int
    n: int
    rss: float

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"no coefficient labelled {label!r}") from None

    def coef(self, label: str) -> float:
        return float(self.coefficients[self.index(label)])

    def se(self, label: str) -> float:
        i = self.index(label)
        return math.sqrt(max(float(self.vcov[i, i]), 0.0))

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.labels, map(float, self.coefficients)))


@dataclass(frozen=True)
class WaldSummary:
    estimate: float
    se: float
    statistic: float
    p_value: float
    ci_low: float
    ci_high: float
    reference: str = "normal"

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "se": self.se,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "reference": self.reference,
        }


def fit_least_squares(X: DesignMatrix | np.ndarray, y, labels: Sequence[str] | None = None) -> FitResult:
    """Least-squares fit through a column-pivoted QR decomposition.

    The coefficient covariance is ``sigma2 * R^-1 R^-T`` so the normal
    equations are never formed.
    """
    if not isinstance(X, DesignMatrix):
        A = np.asarray(X, dtype=float)
        X = DesignMatrix(tuple(labels) if labels is not None else tuple(f"x{i}" for i in range(A.shape[1])), A)
    A = X.values
    y = np.asarray(y, dtype=float)
    n, p = A.shape
    if y.shape != (n,):
        raise ValueError(f"outcome length {y.shape} does not match {n} design rows")
    if p == 0:
        raise UnderdeterminedError("design has no columns")
    if p >= n:
        raise UnderdeterminedError(f"{p} columns for {n} rows: model is under-determined")

    Q, R, piv = linalg.qr(A, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d[0] == 0.0:
        raise RankError(f"column {X.column_labels[piv[0]]!r} is all zero", X.column_labels[piv[0]])
    small = np.flatnonzero(d < RANK_TOL * d[0])
    if small.size:
        label = X.column_labels[piv[small[0]]]
        raise RankError(f"design is rank deficient: column {label!r} is linearly dependent on the others", label)

    qty = Q.T @ y
    b_piv = linalg.solve_triangular(R, qty)
    beta = np.empty(p)
    beta[piv] = b_piv

    resid = y - A @ beta
    rss = float(resid @ resid)
    dof = n - p
    sigma2 = rss / dof if dof > 0 else 0.0

    Rinv = linalg.solve_triangular(R, np.eye(p))
    cov_piv = Rinv @ Rinv.T
    vcov = np.empty((p, p))
    vcov[np.ix_(piv, piv)] = cov_piv
    vcov = sigma2 * 0.5 * (vcov + vcov.T)
    return FitResult(X.column_labels, beta, vcov, sigma2, dof, n, rss)


def wald_from(estimate: float, se: float, reference: str = "normal", dof: float | None = None) -> WaldSummary:
    """Two-sided Wald test and 95% interval for a single estimate."""
    if not se > 0 or not math.isfinite(se):
        raise DegenerateInferenceError(f"standard error must be positive, got {se!r}")
    stat = estimate / se
    if reference == "normal":
        p = 2.0 * normal_sf(abs(stat))
        q = Z_975
        ref = "normal"
    elif reference == "t":
        if dof is None or dof <= 0:
            raise DegenerateInferenceError("t reference needs positive residual degrees of freedom")
        p = 2.0 * t_sf(abs(stat), dof)
        q = t_ppf(0.975, dof)
        ref = f"t({dof:g})"
    else:
        raise ValueError(f"unknown reference distribution {reference!r}")
    p = min(1.0, max(0.0, p))
    return WaldSummary(float(estimate), float(se), float(stat), p, estimate - q * se, estimate + q * se, ref)


def wald(fit: FitResult, label: str, reference: str = "normal") -> WaldSummary:
    """Wald summary for one coefficient; ``reference`` is ``"normal"`` or ``"t"``."""
    est = fit.coef(label)
    return wald_from(est, fit.se(label), reference, fit.dof)
