"""Handover Markov chains built by sampling heads in unexplored regions.

A state holds the two heads of the last handover in a frame where the left
head sits at t = 0. One step draws fresh Poisson heads of every class in the
region the past has not explored, adds the previous head as a deterministic
candidate (it may come back at its second crossing) and picks the earliest
bird that passes below the serving one.
"""

from typing import Dict, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np

from src.models.handover_model import HandoverEvent, HandoverType, MarkovState
from src.models.scenario_model import HeadPoint, ScenarioConfig, SpeedClass
from src.services.envelope_service import downward_crossings, earliest_crossing, simulate_replica
from src.utils.errors import DomainError, NoEvents, Overflow
from src.utils.geometry import bird_heights, half_ellipse_union_area_array, mixed_roots_array
from src.utils.geometry import same_speed_intersection_array

logger = logging.getLogger(__name__)

MAX_DOUBLINGS = 40
INITIAL_SPAN = 2.0  # in units of 1 / (v_serving sqrt(lambda))
BURN_IN = 20.0  # in units of 1 / lambda_V

Step = Tuple[MarkovState, float, float]


def event_to_state(event: HandoverEvent, typed: bool = True) -> MarkovState:
    prev, nxt = event.prev_head, event.next_head
    tag = event.type if typed else None
    if event.type.q == 1:
        return MarkovState(h_l=prev.h, t_r=nxt.t - prev.t, h_r=nxt.h, type=tag)
    return MarkovState(h_l=nxt.h, t_r=prev.t - nxt.t, h_r=prev.h, type=tag)


def state_handover(state: MarkovState, speeds: Dict[int, float]) -> Tuple[float, float]:
    """(s, h) of the handover the state describes, in its local frame"""
    prev, nxt = state.heads()
    vp, vn = speeds[prev.cls], speeds[nxt.cls]
    if vp == vn:
        s, h = same_speed_intersection_array(prev.t, prev.h, nxt.t, nxt.h, vp)
        return float(s), float(h)
    if vp < vn:
        delta, s, h, _, _ = mixed_roots_array(nxt.t, nxt.h, prev.t, prev.h, vn, vp)
    else:
        delta, _, _, s, h = mixed_roots_array(prev.t, prev.h, nxt.t, nxt.h, vp, vn)
    if float(delta) < 0:
        raise DomainError(f"state {state} has no handover")
    return float(s), float(h)


def _left_bounds(prev: HeadPoint, nxt: HeadPoint, s_hat: float, classes: Sequence[SpeedClass]) -> Dict[int, float]:
    """Left end of the unexplored region of each class.

    Heads of the serving class left of the serving head never pass below it.
    Heads of a faster class are unexplored from the handover time on; heads of
    a slower class are unexplored everywhere after a pure handover, and right
    of the previous head after a slow to fast one.
    """
    bounds = {}
    for c in classes:
        if c.index == nxt.cls:
            bounds[c.index] = nxt.t
        elif c.index > nxt.cls:
            bounds[c.index] = prev.t if prev.cls == c.index else -math.inf
        else:
            bounds[c.index] = s_hat
    return bounds


def _next_handover(
    prev: HeadPoint,
    nxt: HeadPoint,
    s_hat: float,
    h_hat: float,
    classes: Sequence[SpeedClass],
    rng: np.random.Generator,
) -> Tuple[HeadPoint, float, float]:
    """Winning head, handover time and distance after (s_hat, h_hat)"""
    speeds = {c.index: c.v for c in classes}
    vn = speeds[nxt.cls]
    lam = sum(c.lam for c in classes)
    bounds = _left_bounds(prev, nxt, s_hat, classes)

    ts: List[np.ndarray] = [np.array([prev.t])]
    hs: List[np.ndarray] = [np.array([prev.h])]
    cs: List[np.ndarray] = [np.array([prev.cls])]
    boxes: Dict[int, Tuple[float, float, float]] = {}
    span = INITIAL_SPAN / (vn * math.sqrt(lam))

    for _ in range(MAX_DOUBLINGS):
        horizon = s_hat + span
        cap = max(h_hat, float(bird_heights(nxt.t, nxt.h, vn, horizon)))
        for c in classes:
            if c.lam == 0:
                continue
            lo = max(bounds[c.index], s_hat - cap / c.v)
            hi = horizon + cap / c.v
            if hi <= lo:
                continue
            n = int(rng.poisson(2.0 * c.lam * c.v * (hi - lo) * cap))
            t = rng.uniform(lo, hi, n)
            h = rng.uniform(0.0, cap, n)
            keep = c.v**2 * (t - s_hat) ** 2 + h**2 >= h_hat**2
            if c.index in boxes:
                lo0, hi0, cap0 = boxes[c.index]
                keep &= ~((t >= lo0) & (t <= hi0) & (h <= cap0))
            boxes[c.index] = (lo, hi, cap)
            ts.append(t[keep])
            hs.append(h[keep])
            cs.append(np.full(int(keep.sum()), c.index, dtype=int))

        t_all, h_all, c_all = np.concatenate(ts), np.concatenate(hs), np.concatenate(cs)
        v_all = np.array([speeds[int(k)] for k in c_all], dtype=float)
        times = downward_crossings(nxt.t, nxt.h, vn, t_all, h_all, v_all)
        j = earliest_crossing(times, s_hat, t_all, c_all)
        if j is not None and times[j] <= horizon:
            s_new = float(times[j])
            winner = HeadPoint(t=float(t_all[j]), h=float(h_all[j]), cls=int(c_all[j]))
            return winner, s_new, float(bird_heights(nxt.t, nxt.h, vn, s_new))
        span *= 2.0
    raise Overflow(f"no crossing found within {MAX_DOUBLINGS} horizon doublings")


def _step(state: MarkovState, classes: Sequence[SpeedClass], rng: np.random.Generator, typed: bool) -> Step:
    speeds = {c.index: c.v for c in classes}
    prev, nxt = state.heads()
    s_hat, h_hat = state_handover(state, speeds)
    winner, s_new, h_new = _next_handover(prev, nxt, s_hat, h_hat, classes, rng)
    q = 1 if winner.t >= nxt.t else 2
    tag = HandoverType(q=q, tau_p=nxt.cls, tau_n=winner.cls) if typed else None
    if q == 1:
        new = MarkovState(h_l=nxt.h, t_r=winner.t - nxt.t, h_r=winner.h, type=tag)
    else:
        new = MarkovState(h_l=winner.h, t_r=nxt.t - winner.t, h_r=nxt.h, type=tag)
    return new, s_new - s_hat, h_new


def step_single(state: MarkovState, lam: float, v: float, rng: np.random.Generator) -> Step:
    return _step(state, [SpeedClass(index=1, v=v, lam=lam)], rng, typed=False)


def step_two_speed(state: MarkovState, classes: Sequence[SpeedClass], rng: np.random.Generator) -> Step:
    if len(classes) != 2:
        raise DomainError("the two-speed chain needs exactly two classes")
    if state.type is None:
        raise DomainError("two-speed states carry a handover type")
    return _step(state, classes, rng, typed=True)


def init_state(
    config: ScenarioConfig,
    rng: np.random.Generator,
    burn_in: Optional[float] = None,
) -> MarkovState:
    """State at the first interior handover of a short direct simulation.

    ``burn_in`` is the window length of that simulation, in units of the
    mean time between handovers; the window doubles until an interior event
    shows up.
    """
    lam = config.total_lambda
    rate = sum(4.0 * c.v * math.sqrt(lam) / math.pi for c in config.classes)
    length = (BURN_IN if burn_in is None else burn_in) / rate
    for _ in range(10):
        short = config.model_copy(update={"window": (0.0, length)})
        out = simulate_replica(short, rng_factory=lambda attempt: rng)
        events = sorted(out.interior_events, key=lambda e: e.s)
        if events:
            return event_to_state(events[0], typed=len(config.classes) == 2)
        length *= 2.0
    raise NoEvents("no interior handover in the burn-in simulation")


def run_chain(
    n_steps: int,
    config: ScenarioConfig,
    rng: np.random.Generator,
    burn_in: Optional[float] = None,
    initial: Optional[MarkovState] = None,
) -> List[Step]:
    if n_steps < 1:
        raise DomainError("n_steps must be at least 1")
    if len(config.classes) > 2:
        raise DomainError("chains exist for one or two speed classes")
    state = initial if initial is not None else init_state(config, rng, burn_in)
    trajectory: List[Step] = []
    for _ in range(n_steps):
        if len(config.classes) == 1:
            c = config.classes[0]
            step = step_single(state, c.lam, c.v, rng)
        else:
            step = step_two_speed(state, config.classes, rng)
        trajectory.append(step)
        state = step[0]
    return trajectory


def dwell_survival(state: MarkovState, lam: float, v: float, tau):
    """P(next single-speed handover later than tau | state)"""
    s_hat, h_hat = state_handover(state, {1: v})
    tau = np.asarray(tau, dtype=float)
    s = s_hat + tau
    u = bird_heights(state.t_r, state.h_r, v, s)
    extra = half_ellipse_union_area_array(s_hat, h_hat, s, u, v) - math.pi * h_hat**2 / (2.0 * v)
    out = np.exp(-2.0 * lam * v * np.maximum(extra, 0.0))
    return float(out) if out.ndim == 0 else out
