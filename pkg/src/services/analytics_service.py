"""Closed-form results and numerical quadratures for the handover process.

Frequencies, Palm laws of the distances and their Laplace transforms are
closed-form. The mixed-speed frequencies, the two-speed Laplace transform of
the squared handover distance and the inter-handover Laplace transform are
importance-sampled Monte Carlo integrals, computed in units where
lambda * pi = 1 and sharded into chunks with their own child generators.
"""

from typing import Callable, Dict, List, Optional, Sequence
import logging
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import integrate, special, stats

from src.models.handover_model import HandoverType
from src.models.report_model import QuadratureResult
from src.models.scenario_model import SpeedClass
from src.utils.errors import DomainError, QuadratureFailure, UnknownLaw
from src.utils.geometry import gaussian_tail_integral, half_ellipse_union_area_array, mixed_roots_array
from src.utils.rng import STREAM_QUADRATURE, make_rng

logger = logging.getLogger(__name__)

CHUNK = 100_000
DEFAULT_SAMPLES = 400_000
PDF_NORM_TOL = 1e-8
QUAD_REL_TOL = 1e-6

# proposal scales for the inter-handover integral (scaled units)
T_HEIGHT_VAR = 2.5
T_GAP_VAR = 10.0

# quadrature tags keep independent integrals on separate streams
TAG_MIXED = 1
TAG_T_PALM = 2


def handover_frequency_single(lam: float, v: float) -> float:
    if lam < 0 or v <= 0:
        raise DomainError(f"need lambda >= 0 and v > 0, got {lam}, {v}")
    return 4.0 * v * math.sqrt(lam) / math.pi


def pure_frequency(lam_l: float, lam_total: float, v_l: float) -> float:
    if not 0 <= lam_l <= lam_total or v_l <= 0:
        raise DomainError("need 0 <= lambda_l <= lambda_total and v_l > 0")
    if lam_total == 0:
        return 0.0
    return handover_frequency_single(lam_total, v_l) * (lam_l / lam_total) ** 2


def visible_head_intensity(lam: float, v: float) -> float:
    if lam < 0 or v <= 0:
        raise DomainError(f"need lambda >= 0 and v > 0, got {lam}, {v}")
    return v * math.sqrt(lam)


def visible_head_intensity_by_class(classes: Sequence[SpeedClass]) -> Dict[int, float]:
    """Class l heads are visible at rate lambda_l v_l / sqrt(lambda)"""
    lam = sum(c.lam for c in classes)
    if lam <= 0:
        return {c.index: 0.0 for c in classes}
    return {c.index: c.lam * c.v / math.sqrt(lam) for c in classes}


class PalmLaw(BaseModel):
    """Closed-form law of one of the distances seen by the user"""

    model_config = ConfigDict(frozen=True)

    name: str
    lam: float = Field(..., gt=0)

    @property
    def _a(self) -> float:
        return self.lam * math.pi

    @property
    def dist(self):
        a = self._a
        if self.name == "handover_distance":
            return stats.nakagami(1.5, scale=math.sqrt(1.5 / a))
        if self.name == "visible_head_distance":
            return stats.halfnorm(scale=math.sqrt(0.5 / a))
        if self.name == "typical_time_distance":
            return stats.rayleigh(scale=math.sqrt(0.5 / a))
        if self.name == "handover_distance_squared":
            return stats.gamma(1.5, scale=1.0 / a)
        raise UnknownLaw(self.name)

    def pdf(self, x):
        return self.dist.pdf(x)

    def cdf(self, x):
        return self.dist.cdf(x)

    def sf(self, x):
        return self.dist.sf(x)

    def quantile(self, p):
        return self.dist.ppf(p)

    @property
    def mean(self) -> float:
        return float(self.dist.mean())

    @property
    def second_moment(self) -> float:
        return float(self.dist.moment(2))

    def laplace(self, gamma):
        """E[exp(-gamma X)] for gamma >= 0"""
        g = np.asarray(gamma, dtype=float)
        a = self._a
        c = g / (2.0 * math.sqrt(a))
        if self.name == "handover_distance":
            out = (1.0 + 2.0 * c**2) * special.erfcx(c) - 2.0 * c / math.sqrt(math.pi)
        elif self.name == "visible_head_distance":
            out = special.erfcx(c)
        elif self.name == "typical_time_distance":
            out = 1.0 - math.sqrt(math.pi) * c * special.erfcx(c)
        elif self.name == "handover_distance_squared":
            out = (1.0 + g / a) ** -1.5
        else:
            raise UnknownLaw(self.name)
        return float(out) if np.ndim(out) == 0 else out

    def laplace_by_quadrature(self, gamma: float) -> float:
        """E[exp(-gamma X)] by quadrature of the pdf, split at a few length scales"""
        split = 5.0 / math.sqrt(self._a)

        def integrand(x: float) -> float:
            return math.exp(-gamma * x) * float(self.pdf(x))

        head, err_head = integrate.quad(integrand, 0.0, split, limit=200, epsabs=1e-12)
        tail, err_tail = integrate.quad(integrand, split, np.inf, limit=200, epsabs=1e-12)
        value, err = head + tail, err_head + err_tail
        if err > QUAD_REL_TOL * max(abs(value), 1e-12):
            raise QuadratureFailure(f"{self.name}: Laplace quadrature error {err:.2e} at gamma={gamma}")
        return float(value)

    def normalization(self) -> float:
        value, _ = integrate.quad(self.pdf, 0.0, np.inf, limit=200)
        return float(value)


LAW_NAMES = (
    "handover_distance",
    "visible_head_distance",
    "typical_time_distance",
    "handover_distance_squared",
)


def palm_law(name: str, lam: float) -> PalmLaw:
    if name not in LAW_NAMES:
        raise UnknownLaw(f"unknown law {name!r}; expected one of {', '.join(LAW_NAMES)}")
    if lam <= 0:
        raise DomainError("lambda must be positive")
    return PalmLaw(name=name, lam=lam)


def laplace_order_check(lam: float, gamma_grid: Sequence[float]) -> List[bool]:
    """L_H^(g) <= L_H~(g) <= L_HV(g) at each grid point, by quadrature of the pdfs"""
    hat = palm_law("handover_distance", lam)
    typical = palm_law("typical_time_distance", lam)
    visible = palm_law("visible_head_distance", lam)
    out = []
    for g in gamma_grid:
        a, b, c = (law.laplace_by_quadrature(float(g)) for law in (hat, typical, visible))
        slack = 1e-8
        out.append(bool(a <= b + slack and b <= c + slack))
    return out


class _MCColumns(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    mean: np.ndarray
    se: np.ndarray
    n: int

    def result(self, col: int) -> QuadratureResult:
        return QuadratureResult(value=float(self.mean[col]), se=float(self.se[col]), n=self.n)


def _mc_columns(
    integrand: Callable[[np.random.Generator, int], np.ndarray],
    n_samples: int,
    seed: int,
    tag: int,
) -> _MCColumns:
    if n_samples < 2:
        raise DomainError("need at least two Monte Carlo samples")
    sums = None
    sumsq = None
    done = 0
    chunk = 0
    while done < n_samples:
        m = min(CHUNK, n_samples - done)
        rng = make_rng(seed, STREAM_QUADRATURE, tag, chunk)
        values = integrand(rng, m)
        if values.ndim == 1:
            values = values[:, None]
        sums = values.sum(axis=0) if sums is None else sums + values.sum(axis=0)
        sq = (values**2).sum(axis=0)
        sumsq = sq if sumsq is None else sumsq + sq
        done += m
        chunk += 1
    mean = sums / done
    var = np.maximum(sumsq / done - mean**2, 0.0)
    return _MCColumns(mean=mean, se=np.sqrt(var / (done - 1)), n=done)


def _check_tolerance(name: str, res: QuadratureResult, rel_tol: Optional[float]) -> QuadratureResult:
    if rel_tol is not None and res.se > rel_tol * max(abs(res.value), 1e-12):
        raise QuadratureFailure(f"{name}: standard error {res.se:.3e} above {rel_tol:.1%} of {res.value:.6g}")
    return res


def _mixed_columns(v1: float, v2: float, gs: Sequence[float], n_samples: int, seed: int, tag: int) -> _MCColumns:
    """J_k(g) = ∫ exp(-g h_k^2) over t >= 0, h_fast, h_slow in lambda*pi = 1 units.

    Columns are ordered (k=1, g0), (k=2, g0), (k=1, g1), ...; heights are
    half-normal and the head offset exponential with mean (v1 + v2)/(v1 v2).
    """
    if not v1 > v2 > 0:
        raise DomainError("mixed integrals need v_fast > v_slow > 0")
    mean_gap = (v1 + v2) / (v1 * v2)
    gs = np.asarray(gs, dtype=float)

    def integrand(rng: np.random.Generator, m: int) -> np.ndarray:
        x1 = np.abs(rng.standard_normal(m))
        x2 = np.abs(rng.standard_normal(m))
        y = rng.exponential(mean_gap, m)
        density = (2.0 / math.pi) * np.exp(-(x1**2 + x2**2) / 2.0) * np.exp(-y / mean_gap) / mean_gap
        delta, _, hh1, _, hh2 = mixed_roots_array(y, x1, 0.0, x2, v1, v2)
        ok = delta > 0
        cols = []
        for g in gs:
            for hh in (hh1, hh2):
                cols.append(np.where(ok, np.exp(-g * np.where(ok, hh, 0.0) ** 2), 0.0) / density)
        return np.column_stack(cols)

    return _mc_columns(integrand, n_samples, seed, tag)


def _mixed_prefactor(fast: SpeedClass, slow: SpeedClass, lam_total: float) -> float:
    return 4.0 * fast.lam * slow.lam * fast.v * slow.v * (lam_total * math.pi) ** -1.5


def mixed_frequency(
    k: int,
    fast: SpeedClass,
    slow: SpeedClass,
    lam_total: float,
    n_samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    rel_tol: Optional[float] = None,
) -> QuadratureResult:
    """Rate of handovers at the k-th crossing of a fast bird with a slow one
    whose head lies to its left.

    k = 1 is the slow to fast handover (type [[1;slow,fast]]), k = 2 the fast
    to slow one (type [[2;fast,slow]]).
    """
    if k not in (1, 2):
        raise DomainError("k must be 1 or 2")
    if lam_total <= 0:
        raise DomainError("total intensity must be positive")
    if fast.lam == 0 or slow.lam == 0:
        return QuadratureResult(value=0.0, se=0.0, n=0)
    cols = _mixed_columns(fast.v, slow.v, [1.0], n_samples, seed, _pair_tag(fast, slow))
    scale = _mixed_prefactor(fast, slow, lam_total)
    res = cols.result(k - 1)
    out = QuadratureResult(value=scale * res.value, se=scale * res.se, n=res.n)
    return _check_tolerance(f"mixed_frequency(k={k})", out, rel_tol)


def _pair_tag(fast: SpeedClass, slow: SpeedClass) -> int:
    return TAG_MIXED * 10_000 + 100 * fast.index + slow.index


def _pairs(classes: Sequence[SpeedClass]):
    ordered = sorted(classes, key=lambda c: -c.v)
    for i, fast in enumerate(ordered):
        for slow in ordered[i + 1 :]:
            yield fast, slow


def total_frequency(
    classes: Sequence[SpeedClass],
    n_samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    rel_tol: Optional[float] = None,
) -> QuadratureResult:
    """Pure frequencies plus twice every mixed frequency"""
    lam = sum(c.lam for c in classes)
    if lam <= 0:
        raise DomainError("total intensity must be positive")
    value = sum(pure_frequency(c.lam, lam, c.v) for c in classes)
    var = 0.0
    n = 0
    for fast, slow in _pairs(classes):
        if fast.lam == 0 or slow.lam == 0:
            continue
        cols = _mixed_columns(fast.v, slow.v, [1.0], n_samples, seed, _pair_tag(fast, slow))
        scale = _mixed_prefactor(fast, slow, lam)
        # the two roots share samples, so their errors are combined through the column sum
        both = cols.mean[0] + cols.mean[1]
        value += 2.0 * scale * both
        var += (2.0 * scale) ** 2 * (cols.se[0] + cols.se[1]) ** 2
        n = cols.n
    out = QuadratureResult(value=float(value), se=math.sqrt(var), n=n)
    return _check_tolerance("total_frequency", out, rel_tol)


def type_frequencies(
    classes: Sequence[SpeedClass],
    n_samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> Dict[str, QuadratureResult]:
    """Analytic intensity of every handover type, keyed by label.

    Reflecting time maps first-root events with the fast head on the right to
    second-root events with the fast head on the left, so [[1;s,f]] and
    [[1;f,s]] share the k = 1 rate and [[2;f,s]], [[2;s,f]] the k = 2 rate.
    """
    lam = sum(c.lam for c in classes)
    out: Dict[str, QuadratureResult] = {}
    for c in classes:
        label = HandoverType(q=1, tau_p=c.index, tau_n=c.index).label
        out[label] = QuadratureResult(value=pure_frequency(c.lam, lam, c.v), se=0.0, n=0)
    for fast, slow in _pairs(classes):
        r1 = mixed_frequency(1, fast, slow, lam, n_samples, seed)
        r2 = mixed_frequency(2, fast, slow, lam, n_samples, seed)
        out[HandoverType(q=1, tau_p=slow.index, tau_n=fast.index).label] = r1
        out[HandoverType(q=1, tau_p=fast.index, tau_n=slow.index).label] = r1
        out[HandoverType(q=2, tau_p=fast.index, tau_n=slow.index).label] = r2
        out[HandoverType(q=2, tau_p=slow.index, tau_n=fast.index).label] = r2
    return out


def mixed_H2_laplace(
    gamma: float,
    classes: Sequence[SpeedClass],
    n_samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    rel_tol: Optional[float] = None,
) -> QuadratureResult:
    """E0[exp(-gamma H^2)] for a two-speed population.

    Pure parts are closed-form; the two mixed parts are the triple integrals
    with exp(-(lambda pi + gamma) h_k^2), evaluated on the same samples as the
    normalizing frequency so the value at gamma = 0 is exactly 1.
    """
    if len(classes) != 2:
        raise DomainError("mixed_H2_laplace needs exactly two classes")
    if gamma < 0:
        raise DomainError("gamma must be non-negative")
    lam = sum(c.lam for c in classes)
    g = 1.0 + gamma / (lam * math.pi)
    fast, slow = sorted(classes, key=lambda c: -c.v)
    pure = sum(pure_frequency(c.lam, lam, c.v) for c in classes)
    if fast.lam == 0 or slow.lam == 0:
        return QuadratureResult(value=g**-1.5, se=0.0, n=0)
    cols = _mixed_columns(fast.v, slow.v, [1.0, g], n_samples, seed, _pair_tag(fast, slow))
    scale = 2.0 * _mixed_prefactor(fast, slow, lam)
    rate = pure + scale * (cols.mean[0] + cols.mean[1])
    numerator = pure * g**-1.5 + scale * (cols.mean[2] + cols.mean[3])
    value = numerator / rate
    se = scale * (cols.se[2] + cols.se[3] + value * (cols.se[0] + cols.se[1])) / rate
    out = QuadratureResult(value=float(value), se=float(se), n=cols.n)
    return _check_tolerance("mixed_H2_laplace", out, rel_tol)


def _t_palm_columns(rhos: Sequence[float], n_samples: int, seed: int) -> _MCColumns:
    """Columns: for each scaled rho', w exp(-rho' dT) and w (1 - exp(-rho' dT)) / rho'.

    Heights and head gaps are scaled by sqrt(lambda pi) (and gaps by v), the
    middle head sits at 0 with the left head at -tau2 and the right at tau3.
    """
    rhos = np.asarray(rhos, dtype=float)
    sx = math.sqrt(T_HEIGHT_VAR)
    st = math.sqrt(T_GAP_VAR)
    const = 2.0 / math.pi**1.5

    def half_normal_pdf(x, s):
        return math.sqrt(2.0 / math.pi) / s * np.exp(-(x**2) / (2.0 * s**2))

    def integrand(rng: np.random.Generator, m: int) -> np.ndarray:
        x1, x2, x3 = (np.abs(rng.standard_normal(m)) * sx for _ in range(3))
        tau2, tau3 = (np.abs(rng.standard_normal(m)) * st for _ in range(2))
        density = (
            half_normal_pdf(x1, sx) * half_normal_pdf(x2, sx) * half_normal_pdf(x3, sx)
            * half_normal_pdf(tau2, st) * half_normal_pdf(tau3, st)
        )
        sigma = (x1**2 - tau2**2 - x2**2) / (2.0 * tau2)
        sigma1 = (tau3**2 + x3**2 - x1**2) / (2.0 * tau3)
        ok = sigma1 >= sigma
        hh = np.sqrt(sigma**2 + x1**2)
        hh1 = np.sqrt(sigma1**2 + x1**2)
        area = half_ellipse_union_area_array(sigma, hh, sigma1, hh1, 1.0)
        w = np.where(ok, const * np.exp(-(2.0 / math.pi) * area) / density, 0.0)
        gap = np.where(ok, sigma1 - sigma, 0.0)
        cols = []
        for r in rhos:
            decay = np.exp(-r * gap)
            cols.append(w * decay)
            cols.append(w * (1.0 - decay) / r if r > 0 else w * gap)
        return np.column_stack(cols)

    return _mc_columns(integrand, n_samples, seed, TAG_T_PALM)


def laplace_T_single(
    rho: float,
    lam: float,
    v: float = 1.0,
    mc_samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    rel_tol: Optional[float] = None,
) -> QuadratureResult:
    """E0[exp(-rho T)] for the time between consecutive single-speed handovers.

    Depends on (rho, lambda, v) only through rho / (v sqrt(lambda pi)).
    """
    if rho < 0:
        raise DomainError("rho must be non-negative")
    if lam <= 0 or v <= 0:
        raise DomainError("need lambda > 0 and v > 0")
    scaled = rho / (v * math.sqrt(lam * math.pi))
    res = _t_palm_columns([scaled], mc_samples, seed).result(0)
    return _check_tolerance("laplace_T_single", res, rel_tol)


def laplace_T_slope(
    rho: float,
    lam: float,
    v: float = 1.0,
    mc_samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> QuadratureResult:
    """(1 - E0[exp(-rho T)]) / rho on common samples; tends to 1 / lambda_V as rho -> 0"""
    if rho <= 0:
        raise DomainError("rho must be positive")
    a = v * math.sqrt(lam * math.pi)
    res = _t_palm_columns([rho / a], mc_samples, seed).result(1)
    # the column holds (1 - e^{-rho' dT}) / rho' in scaled time
    return QuadratureResult(value=res.value / a, se=res.se / a, n=res.n)


def identity_selftests() -> Dict[str, object]:
    """Numerical checks of the max-Gaussian identity and the Gaussian tail integral"""
    checks = []

    # ∫∫ exp(-max(x, y)^2) over the quadrant, as twice the triangle y <= x
    tri, _ = integrate.dblquad(lambda y, x: math.exp(-(x**2)), 0.0, np.inf, 0.0, lambda x: x)
    checks.append({"name": "max_gaussian_identity", "value": 2.0 * tri, "expected": 1.0})

    for a, b in ((1.0, 0.0), (1.0, 1.0), (math.pi / 4, math.pi / 4)):
        quad, _ = integrate.quad(_tail_integrand, 0.0, np.inf, args=(a, b), limit=200)
        checks.append(
            {"name": f"gaussian_tail(a={a:.6g},b={b:.6g})", "value": gaussian_tail_integral(a, b), "expected": quad}
        )

    for c in checks:
        c["abs_error"] = abs(c["value"] - c["expected"])
        c["passed"] = bool(c["abs_error"] <= 1e-6)
    return {"checks": checks, "passed": all(c["passed"] for c in checks)}


def _tail_integrand(x: float, a: float, b: float) -> float:
    if x == 0:
        return 1.0 if b == 0 else 0.0
    return math.exp(-a * x**2 - b / x**2)
