"""Scalar distribution functions used for p-values and confidence limits."""

import math

from scipy import special, stats

Z_975 = 1.959963984540054


def normal_cdf(x: float) -> float:
    """Standard normal CDF via the complementary error function.

    Using ``erfc`` on the tail keeps relative accuracy far into both tails.
    """
    x = float(x)
    if x < 0:
        return 0.5 * math.erfc(-x / math.sqrt(2.0))
    return 1.0 - 0.5 * math.erfc(x / math.sqrt(2.0))


def normal_sf(x: float) -> float:
    return normal_cdf(-x)


def normal_ppf(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly between 0 and 1")
    return float(special.ndtri(p))


def chisq_sf(x: float, df: int) -> float:
    """Upper-tail probability of a chi-square variate with ``df`` degrees of freedom."""
    if df <= 0 or int(df) != df:
        raise ValueError(f"df must be a positive integer, got {df!r}")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 1.0
    if df == 1:
        return math.erfc(math.sqrt(x / 2.0))
    return float(special.gammaincc(df / 2.0, x / 2.0))


def t_sf(x: float, dof: float) -> float:
    """Upper-tail probability of Student's t."""
    if dof <= 0:
        raise ValueError("dof must be positive")
    return float(stats.t.sf(x, dof))


def t_ppf(p: float, dof: float) -> float:
    return float(stats.t.ppf(p, dof))
