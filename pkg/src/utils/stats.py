"""Statistical tests used by the Palm estimators and the validation suite.

Thin wrappers over scipy.stats that enforce minimum sample sizes and return
``TestResult`` models. All p-values are asymptotic.
"""

from typing import Callable, Sequence, Tuple
import math

import numpy as np
from scipy import stats

from src.models.report_model import TestResult
from src.utils.errors import InsufficientSamples, ZeroExpected

MIN_KS_SAMPLES = 30


def _clip_p(p: float) -> float:
    return float(min(max(p, 0.0), 1.0))


def ks_one_sample(samples, cdf: Callable, name: str = "ks_one_sample") -> TestResult:
    x = np.asarray(samples, dtype=float)
    if x.size < MIN_KS_SAMPLES:
        raise InsufficientSamples(f"{name}: need at least {MIN_KS_SAMPLES} samples, got {x.size}")
    result = stats.kstest(x, cdf, method="asymp")
    return TestResult(name=name, statistic=float(result.statistic), p_value=_clip_p(result.pvalue), n=int(x.size))


def ks_two_sample(a, b, name: str = "ks_two_sample") -> TestResult:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if min(a.size, b.size) < MIN_KS_SAMPLES:
        raise InsufficientSamples(f"{name}: need at least {MIN_KS_SAMPLES} samples per side")
    result = stats.ks_2samp(a, b, method="asymp")
    return TestResult(
        name=name, statistic=float(result.statistic), p_value=_clip_p(result.pvalue), n=int(min(a.size, b.size))
    )


def chi_square(counts, expected, ddof: int = 0, name: str = "chi_square") -> TestResult:
    """Pearson statistic against absolute expected counts.

    Degrees of freedom are ``len(counts) - ddof``; pass ``ddof=1`` when the
    expected counts were rescaled to the observed total.
    """
    o = np.asarray(counts, dtype=float)
    e = np.asarray(expected, dtype=float)
    if o.shape != e.shape or o.size == 0:
        raise InsufficientSamples(f"{name}: counts and expected must be non-empty and aligned")
    if np.any(e <= 0):
        raise ZeroExpected(f"{name}: expected counts must be positive")
    dof = o.size - ddof
    if dof < 1:
        raise InsufficientSamples(f"{name}: no degrees of freedom left")
    statistic = float(np.sum((o - e) ** 2 / e))
    return TestResult(name=name, statistic=statistic, p_value=_clip_p(stats.chi2.sf(statistic, dof)), n=int(o.sum()))


def poisson_dispersion(counts, name: str = "poisson_dispersion") -> TestResult:
    """(n - 1) s^2 / mean against chi-square(n - 1), two-sided"""
    c = np.asarray(counts, dtype=float)
    if c.size < 2:
        raise InsufficientSamples(f"{name}: need at least two counts")
    mean = c.mean()
    if mean <= 0:
        raise ZeroExpected(f"{name}: mean count is zero")
    statistic = float((c.size - 1) * c.var(ddof=1) / mean)
    dof = c.size - 1
    p = 2.0 * min(stats.chi2.cdf(statistic, dof), stats.chi2.sf(statistic, dof))
    return TestResult(name=name, statistic=statistic, p_value=_clip_p(p), n=int(c.size))


def wilson_ci(k: int, n: int, level: float = 0.95) -> Tuple[float, float]:
    if n <= 0:
        raise InsufficientSamples("wilson_ci needs n > 0")
    z = stats.norm.ppf(0.5 + level / 2.0)
    p = k / n
    denom = 1.0 + z**2 / n
    centre = (p + z**2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z**2 / (4 * n**2)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def two_rate_test(k1: int, k2: int, name: str = "two_rate") -> TestResult:
    """Equal Poisson rates over a common exposure: k1 | k1 + k2 ~ Bin(k1 + k2, 1/2)"""
    total = int(k1 + k2)
    if total == 0:
        raise InsufficientSamples(f"{name}: both counts are zero")
    result = stats.binomtest(int(k1), total, 0.5)
    return TestResult(name=name, statistic=float(k1 / total), p_value=_clip_p(result.pvalue), n=total)


def two_sample_z(x1: float, se1: float, x2: float, se2: float, name: str = "two_sample_z") -> TestResult:
    scale = math.hypot(se1, se2)
    if scale == 0:
        raise ZeroExpected(f"{name}: both standard errors are zero")
    z = (x1 - x2) / scale
    return TestResult(name=name, statistic=float(z), p_value=_clip_p(2.0 * stats.norm.sf(abs(z))), n=2)


def mean_ci(values: Sequence[float], level: float = 0.95) -> Tuple[float, float, float, float]:
    """(mean, se, lo, hi) with a Student t interval"""
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        raise InsufficientSamples("mean_ci needs at least two values")
    mean = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(x.size))
    q = stats.t.ppf(0.5 + level / 2.0, x.size - 1)
    return mean, se, mean - q * se, mean + q * se


def normal_ci(value: float, se: float, level: float = 0.95) -> Tuple[float, float]:
    z = stats.norm.ppf(0.5 + level / 2.0)
    return value - z * se, value + z * se
