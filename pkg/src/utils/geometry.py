"""Geometry of radial birds in the time-distance half-plane.

A station with head point (T, H) and speed v is at distance
sqrt(v^2 (t - T)^2 + H^2) from the user at time t. Everything here is a pure
function; the ``*_array`` variants broadcast over numpy arrays and are what the
simulator and the Monte Carlo integrators call.
"""

from typing import List, Tuple
import logging
import math

import numpy as np
from scipy import integrate

from src.models.scenario_model import HeadPoint, PlanarStation
from src.models.handover_model import HalfEllipseRegion, Intersection, RadialBird
from src.utils.errors import DomainError, EqualAbscissa, NonPositiveRadius

logger = logging.getLogger(__name__)

TANGENT_TOL = 1e-12
ARCSIN_SLACK = 1e-9


def bird_height(bird: RadialBird, t: float) -> float:
    return math.hypot(bird.v * (t - bird.head.t), bird.head.h)


def bird_heights(t_head, h_head, v, t) -> np.ndarray:
    return np.hypot(np.asarray(v) * (np.asarray(t) - np.asarray(t_head)), h_head)


def head_from_station(st: PlanarStation, v: float) -> HeadPoint:
    """Time and distance of closest approach of a station moving at speed v"""
    if v <= 0:
        raise DomainError("speed must be positive")
    return HeadPoint(
        t=-(st.R / v) * math.cos(st.alpha),
        h=st.R * abs(math.sin(st.alpha)),
        cls=st.cls,
    )


def same_speed_intersection_array(t1, h1, t2, h2, v) -> Tuple[np.ndarray, np.ndarray]:
    """(s, h) of the single crossing of two birds with the same speed"""
    t1, h1, t2, h2 = (np.asarray(a, dtype=float) for a in (t1, h1, t2, h2))
    v = np.asarray(v, dtype=float)
    # rescale time by v, so both birds are unit-speed hyperbolas
    x1, x2 = v * t1, v * t2
    with np.errstate(divide="ignore", invalid="ignore"):
        xs = (x1**2 + h1**2 - x2**2 - h2**2) / (2.0 * (x1 - x2))
    s = xs / v
    h = np.sqrt((xs - x1) ** 2 + h1**2)
    return s, h


def intersect_same_speed(b1: RadialBird, b2: RadialBird) -> Intersection:
    if b1.v != b2.v:
        raise DomainError("birds have different speeds")
    if b1.head.t == b2.head.t:
        raise EqualAbscissa(f"both heads have abscissa {b1.head.t}")
    s, h = same_speed_intersection_array(b1.head.t, b1.head.h, b2.head.t, b2.head.h, b1.v)
    return Intersection(s=float(s), h=float(h), kind="unique")


def mixed_discriminant(t1, h1, t2, h2, v1, v2):
    """Delta = v1^2 v2^2 (t1 - t2)^2 - (h1^2 - h2^2)(v1^2 - v2^2), fast bird first"""
    return v1**2 * v2**2 * (t1 - t2) ** 2 - (h1**2 - h2**2) * (v1**2 - v2**2)


def critical_offset(h1: float, h2: float, v1: float, v2: float) -> float:
    """|t1 - t2| at which a fast bird (h1) is tangent to a slow bird (h2)"""
    if not v1 > v2 > 0:
        raise DomainError("critical offset needs v1 > v2 > 0")
    if h1 <= h2:
        return 0.0
    return math.sqrt(h1**2 - h2**2) * math.sqrt(v1**2 - v2**2) / (v1 * v2)


def mixed_roots_array(t1, h1, t2, h2, v1, v2):
    """Both crossings of a fast bird (t1, h1, v1) with a slow one (t2, h2, v2).

    Returns (delta, s_first, h_first, s_second, h_second); roots are NaN where
    delta < 0. The fast bird is below the slow one strictly between the roots.
    """
    t1, h1, t2, h2, v1, v2 = (np.asarray(a, dtype=float) for a in (t1, h1, t2, h2, v1, v2))
    t = t1 - t2
    d = v1**2 - v2**2
    delta = mixed_discriminant(t1, h1, t2, h2, v1, v2)
    scale = v1**2 * v2**2 * t**2 + 1.0
    delta = np.where(np.abs(delta) < TANGENT_TOL * scale, 0.0, delta)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.sqrt(np.where(delta >= 0, delta, np.nan))
        a = v2**2 * t
        c = h1**2 - h2**2 - v2**2 * t**2  # d * x1 * x2
        # offsets of the roots from the fast head; pick the form without cancellation
        x1_direct = (a - r) / d
        x2_direct = (a + r) / d
        x1_stable = c / (a + r)
        x2_stable = c / (a - r)
        x1 = np.where(a > 0, x1_stable, x1_direct)
        x2 = np.where(a < 0, x2_stable, x2_direct)
        x1 = np.where(np.isfinite(x1), x1, x1_direct)
        x2 = np.where(np.isfinite(x2), x2, x2_direct)
    s1 = t1 + x1
    s2 = t1 + x2
    hh1 = np.sqrt(v1**2 * x1**2 + h1**2)
    hh2 = np.sqrt(v1**2 * x2**2 + h1**2)
    return delta, s1, hh1, s2, hh2


def intersect_mixed(fast: RadialBird, slow: RadialBird) -> List[Intersection]:
    if not fast.v > slow.v:
        raise DomainError("first bird must be the faster one")
    delta, s1, hh1, s2, hh2 = mixed_roots_array(
        fast.head.t, fast.head.h, slow.head.t, slow.head.h, fast.v, slow.v
    )
    delta = float(delta)
    if delta < 0:
        return []
    if delta == 0:
        return [Intersection(s=float(s1), h=float(hh1), kind="tangent")]
    return [
        Intersection(s=float(s1), h=float(hh1), kind="first"),
        Intersection(s=float(s2), h=float(hh2), kind="second"),
    ]


def region_contains(region: HalfEllipseRegion, p: HeadPoint) -> bool:
    return p.h >= 0 and region.v**2 * (p.t - region.s) ** 2 + p.h**2 < region.u**2


def in_half_ellipse_array(t, h, s, u, v) -> np.ndarray:
    t, h, v = np.asarray(t, dtype=float), np.asarray(h, dtype=float), np.asarray(v, dtype=float)
    return (h >= 0) & (v**2 * (t - s) ** 2 + h**2 < np.asarray(u, dtype=float) ** 2)


def _safe_arcsin(x: np.ndarray) -> np.ndarray:
    if np.any(np.abs(x) > 1.0 + ARCSIN_SLACK):
        raise DomainError(f"arcsin argument out of range: {np.max(np.abs(x))!r}")
    return np.arcsin(np.clip(x, -1.0, 1.0))


def half_ellipse_union_area_array(s1, l1, s2, l2, v) -> np.ndarray:
    """|E^{s1,v}_{l1} ∪ E^{s2,v}_{l2}| for broadcastable arrays.

    Crossing abscissa t(v) and height h(v) select one of three arcsin forms;
    disjoint pairs add up and nested pairs keep the larger region.
    """
    s1, l1, s2, l2, v = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (s1, l1, s2, l2, v)))
    shape = s1.shape
    s1, l1, s2, l2, v = (np.ravel(a) for a in (s1, l1, s2, l2, v))
    swap = s1 > s2
    s1, s2 = np.where(swap, s2, s1), np.where(swap, s1, s2)
    l1, l2 = np.where(swap, l2, l1), np.where(swap, l1, l2)

    gap = v * (s2 - s1)
    disjoint = gap >= l1 + l2
    nested = gap <= np.abs(l1 - l2)
    crossing = ~(disjoint | nested)

    out = np.where(disjoint, math.pi * (l1**2 + l2**2) / (2.0 * v), 0.0)
    out = np.where(nested, math.pi * np.maximum(l1, l2) ** 2 / (2.0 * v), out)
    if not np.any(crossing):
        return out.reshape(shape)

    s1c, l1c, s2c, l2c, vc = (a[crossing] for a in (s1, l1, s2, l2, v))
    width = s2c - s1c
    tv = (s1c + s2c) / 2.0 + (l1c**2 - l2c**2) / (2.0 * vc**2 * width)
    hv = np.sqrt(np.maximum(l1c**2 - vc**2 * (tv - s1c) ** 2, 0.0))
    a1 = l1c**2 * _safe_arcsin(hv / l1c)
    a2 = l2c**2 * _safe_arcsin(hv / l2c)
    f1 = a2 - a1
    f2 = a2 + a1
    chord = vc * hv * width
    right = tv >= s2c
    left = tv <= s1c
    area = np.where(
        right,
        math.pi * l1c**2 + chord + f1,
        np.where(left, math.pi * l2c**2 + chord - f1, math.pi * (l1c**2 + l2c**2) + chord - f2),
    ) / (2.0 * vc)
    out[crossing] = area
    return out.reshape(shape)


def half_ellipse_union_area(s1: float, l1: float, s2: float, l2: float, v: float) -> float:
    if l1 <= 0 or l2 <= 0:
        raise NonPositiveRadius(f"radii must be positive, got {l1}, {l2}")
    if v <= 0:
        raise DomainError("speed must be positive")
    return float(half_ellipse_union_area_array(s1, l1, s2, l2, v))


def half_ball_union_area(s: float, h: float, s_prime: float, h_prime: float) -> float:
    return half_ellipse_union_area(s, h, s_prime, h_prime, 1.0)


def hyperbola_extra_area(slow: RadialBird, s_a: float, s_b: float, v1: float) -> float:
    """Area swept by fast half-ellipses centred on a slow bird, outside the two end ones.

    The fast half-ellipses E^{s,v1}_{h(s)} for s in [s_a, s_b], with h(s) the
    slow bird's height, are bounded above by the hyperbola
    u^2 = h2^2 + (v1^2 v2^2 / (v1^2 - v2^2)) (t - t2)^2 over the mapped interval
    [(s_a (v1^2 - v2^2) + v2^2 t2) / v1^2, (s_b (v1^2 - v2^2) + v2^2 t2) / v1^2].
    """
    v2, t2, h2 = slow.v, slow.head.t, slow.head.h
    if not v1 > v2:
        raise DomainError("hyperbola area needs a faster ellipse speed")
    if s_b < s_a:
        raise DomainError("s_a must not exceed s_b")
    if s_a == s_b:
        return 0.0
    d = v1**2 - v2**2
    c = v1**2 * v2**2 / d
    lo = (s_a * d + v2**2 * t2) / v1**2
    hi = (s_b * d + v2**2 * t2) / v1**2
    ua = bird_height(slow, s_a)
    ub = bird_height(slow, s_b)

    def gap(t: float) -> float:
        top = math.sqrt(h2**2 + c * (t - t2) ** 2)
        ea = ua**2 - v1**2 * (t - s_a) ** 2
        eb = ub**2 - v1**2 * (t - s_b) ** 2
        floor = math.sqrt(max(ea, eb, 0.0))
        return max(top - floor, 0.0)

    kinks = [x for x in (s_a + ua / v1, s_b - ub / v1, t2) if lo < x < hi]
    value, err = integrate.quad(gap, lo, hi, points=kinks or None, limit=200, epsabs=1e-12, epsrel=1e-10)
    logger.debug(f"hyperbola_extra_area quad error estimate {err:.3e}")
    return float(value)


def gaussian_tail_integral(a: float, b: float) -> float:
    """∫_0^∞ exp(-a x^2 - b / x^2) dx = sqrt(pi) / (2 sqrt(a)) exp(-2 sqrt(a b))"""
    if a <= 0 or b < 0:
        raise DomainError(f"need a > 0 and b >= 0, got a={a}, b={b}")
    return math.sqrt(math.pi) / (2.0 * math.sqrt(a)) * math.exp(-2.0 * math.sqrt(a * b))
