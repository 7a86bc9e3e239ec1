"""Seeded sampling of stations in the plane and of the head point process.

The simulator samples heads directly on the upper half-plane: class l heads
are Poisson with intensity 2 lambda_l v_l per unit of (time x distance).
Planar sampling is kept for the displacement and mapping consistency checks.
"""

from typing import Iterable, List
import logging
import math

import numpy as np

from src.models.scenario_model import (
    DirectionLaw,
    HeadPoint,
    HeadWindow,
    PlanarStation,
    Realization,
    ScenarioConfig,
)
from src.utils.errors import ConfigError
from src.utils.geometry import head_from_station

logger = logging.getLogger(__name__)


def _wrap_angle(x: np.ndarray) -> np.ndarray:
    """Map angles to [-pi, pi)"""
    out = np.mod(np.asarray(x, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    return np.where(out >= math.pi, out - 2.0 * math.pi, out)


def sample_planar_stations(
    lam: float,
    radius: float,
    direction_law: DirectionLaw,
    rng: np.random.Generator,
    cls: int = 1,
    v: float = 1.0,
) -> List[PlanarStation]:
    """Poisson stations in the disk of the given radius around the user"""
    if lam < 0 or radius <= 0:
        raise ConfigError(f"need lambda >= 0 and radius > 0, got {lam}, {radius}")
    n = int(rng.poisson(lam * math.pi * radius**2))
    if n == 0:
        return []
    r = radius * np.sqrt(rng.random(n))
    phi = rng.uniform(-math.pi, math.pi, n)
    if direction_law.kind == "fixed":
        theta = np.full(n, direction_law.theta)
    else:
        theta = rng.uniform(-math.pi, math.pi, n)
    alpha = _wrap_angle(theta - phi)
    return [
        PlanarStation(R=float(r[i]), alpha=float(alpha[i]), cls=cls, theta=float(theta[i]), v=v)
        for i in range(n)
    ]


def station_positions(stations: Iterable[PlanarStation]) -> np.ndarray:
    """(n, 2) array of planar positions"""
    pts = [st.position for st in stations]
    return np.array(pts, dtype=float).reshape(-1, 2)


def displace(stations: List[PlanarStation], t: float) -> List[PlanarStation]:
    """Move every station by v t along its heading"""
    moved = []
    for st in stations:
        x, y = st.position
        x += st.v * t * math.cos(st.theta)
        y += st.v * t * math.sin(st.theta)
        phi = math.atan2(y, x)
        alpha = float(_wrap_angle(st.theta - phi))
        moved.append(st.model_copy(update={"R": math.hypot(x, y), "alpha": alpha}))
    return moved


def stations_to_heads(stations: Iterable[PlanarStation]) -> List[HeadPoint]:
    return [head_from_station(st, st.v) for st in stations]


def visible_rate_upper(config: ScenarioConfig) -> float:
    """Sum over classes of 4 v_l sqrt(lambda) / pi; bounds the handover rate"""
    root = math.sqrt(config.total_lambda)
    return float(sum(4.0 * c.v * root / math.pi for c in config.classes))


def size_window(config: ScenarioConfig) -> HeadWindow:
    """Height cap and time buffers for the truncated head process.

    h_max keeps the expected number of envelope excursions above the cap
    within the window below epsilon; the buffers hold every head whose bird
    can dip below h_max inside the window.
    """
    lam = config.total_lambda
    if lam <= 0:
        raise ConfigError("total intensity must be positive")
    length = config.t_end - config.t_start
    excursions = max(1.0, visible_rate_upper(config) * length)
    h_max = math.sqrt(math.log(excursions / config.epsilon) / (lam * math.pi))
    return _window_for(config, h_max)


def _window_for(config: ScenarioConfig, h_max: float) -> HeadWindow:
    guard = h_max / config.v_min
    t_lo, t_hi = config.t_start - guard, config.t_end + guard
    expected = {c.index: 2.0 * c.lam * c.v * (t_hi - t_lo) * h_max for c in config.classes}
    return HeadWindow(t_lo=t_lo, t_hi=t_hi, h_max=h_max, guard=guard, expected_counts=expected)


def enlarge_window(config: ScenarioConfig, window: HeadWindow, factor: float = 2.0) -> HeadWindow:
    return _window_for(config, window.h_max * factor)


def sample_heads(
    config: ScenarioConfig,
    window: HeadWindow,
    rng: np.random.Generator,
    replica: int = 0,
) -> Realization:
    """Independent per-class Poisson heads on [t_lo, t_hi] x [0, h_max]"""
    ts, hs, cs = [], [], []
    for c in config.classes:
        mean = window.expected_counts.get(c.index, 2.0 * c.lam * c.v * (window.t_hi - window.t_lo) * window.h_max)
        n = int(rng.poisson(mean)) if mean > 0 else 0
        ts.append(rng.uniform(window.t_lo, window.t_hi, n))
        hs.append(rng.uniform(0.0, window.h_max, n))
        cs.append(np.full(n, c.index, dtype=int))
    t = np.concatenate(ts)
    h = np.concatenate(hs)
    cls = np.concatenate(cs)
    order = np.lexsort((cls, t))
    logger.debug(f"replica {replica}: sampled {t.size} heads, h_max={window.h_max:.4f}")
    return Realization(t=t[order], h=h[order], cls=cls[order], config=config, window=window, replica=replica)
