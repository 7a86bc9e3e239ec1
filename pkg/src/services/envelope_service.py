"""Lower envelope of the radial birds and the handover events it induces.

Two exact paths compute the envelope:

* one speed class: h(t)^2 - v^2 t^2 = -2 v^2 T t + v^2 T^2 + H^2 is affine in
  t, so the envelope is the lower envelope of lines (monotone stack over
  slopes, as in a convex hull scan);
* several classes: a sweep that keeps the serving bird and jumps to the
  earliest downward crossing among all other birds, computed in closed form.
"""

from typing import Callable, List, Optional, Set, Tuple
import logging

import numpy as np

from src.models.handover_model import EnvelopeSegment, HandoverEvent, HandoverType
from src.models.report_model import ReplicaOutput
from src.models.scenario_model import HeadPoint, Realization, ScenarioConfig
from src.services.point_process_service import enlarge_window, sample_heads, size_window
from src.utils.errors import EmptyRealization, Overflow, VoidViolation
from src.utils.geometry import bird_heights, mixed_roots_array, same_speed_intersection_array
from src.utils.rng import STREAM_HEADS, replica_rng

logger = logging.getLogger(__name__)

VOID_RTOL = 1e-9
MAX_OVERFLOW_RETRIES = 3


def downward_crossings(tc: float, hc: float, vc: float, t, h, v) -> np.ndarray:
    """Times at which each bird (t, h, v) passes below the bird (tc, hc, vc).

    NaN where that never happens. Same-speed birds cross downward once iff
    their head lies to the right; a faster bird dips below at its first root
    and a slower one at the second root. Tangencies are not crossings.
    """
    t = np.asarray(t, dtype=float)
    h = np.asarray(h, dtype=float)
    v = np.asarray(v, dtype=float)
    out = np.full(t.shape, np.nan)

    same = v == vc
    if np.any(same):
        s, _ = same_speed_intersection_array(tc, hc, t[same], h[same], vc)
        out[same] = np.where(t[same] > tc, s, np.nan)

    faster = v > vc
    if np.any(faster):
        delta, s1, _, _, _ = mixed_roots_array(t[faster], h[faster], tc, hc, v[faster], vc)
        out[faster] = np.where(delta > 0, s1, np.nan)

    slower = v < vc
    if np.any(slower):
        delta, _, _, s2, _ = mixed_roots_array(tc, hc, t[slower], h[slower], vc, v[slower])
        out[slower] = np.where(delta > 0, s2, np.nan)
    return out


def earliest_crossing(times: np.ndarray, after: float, t, cls) -> Optional[int]:
    """Index of the earliest finite time strictly after ``after``.

    Ties go to the smaller head abscissa, then the smaller class index.
    """
    valid = np.isfinite(times) & (times > after)
    if not np.any(valid):
        return None
    idx = np.flatnonzero(valid)
    best = times[idx].min()
    tied = idx[times[idx] == best]
    if tied.size == 1:
        return int(tied[0])
    order = np.lexsort((np.asarray(cls)[tied], np.asarray(t)[tied]))
    return int(tied[order[0]])


def _initial_serving(real: Realization, at: float, speeds: np.ndarray) -> int:
    heights = bird_heights(real.t, real.h, speeds, at)
    return int(np.lexsort((real.cls, real.t, heights))[0])


def _line_breakpoints(real: Realization, v: float) -> Tuple[List[int], List[float]]:
    """Serving indices and breakpoints of a single-speed envelope on the window"""
    t0, t1 = real.config.t_start, real.config.t_end
    # lines y = m x + b with m = -2 v^2 T: order by slope descending, i.e. T ascending;
    # for equal T only the lowest head can serve
    order = np.lexsort((real.cls, real.h, real.t))
    stack: List[int] = []
    cuts: List[float] = []
    last_t = None
    for i in order:
        ti = real.t[i]
        if last_t is not None and ti == last_t:
            continue
        last_t = ti
        while stack:
            j = stack[-1]
            x, _ = same_speed_intersection_array(real.t[j], real.h[j], ti, real.h[i], v)
            x = float(x)
            if cuts and x <= cuts[-1]:
                stack.pop()
                cuts.pop()
                continue
            cuts.append(x)
            break
        stack.append(int(i))
    # stack[k] serves on [cuts[k-1], cuts[k]]
    serving: List[int] = []
    breaks: List[float] = []
    for k, idx in enumerate(stack):
        lo = cuts[k - 1] if k > 0 else -np.inf
        hi = cuts[k] if k < len(cuts) else np.inf
        if hi <= t0 or lo >= t1:
            continue
        if serving:
            breaks.append(lo)
        serving.append(idx)
    return serving, breaks


def _sweep_breakpoints(real: Realization, speeds: np.ndarray) -> Tuple[List[int], List[float]]:
    """Serving indices and breakpoints for any number of speed classes"""
    t0, t1 = real.config.t_start, real.config.t_end
    current = _initial_serving(real, t0, speeds)
    serving, breaks = [current], []
    now = t0
    limit = 4 * real.n_heads + 16
    for _ in range(limit):
        times = downward_crossings(real.t[current], real.h[current], speeds[current], real.t, real.h, speeds)
        times[current] = np.nan
        nxt = earliest_crossing(times, now, real.t, real.cls)
        if nxt is None or times[nxt] >= t1:
            return serving, breaks
        now = float(times[nxt])
        current = nxt
        serving.append(current)
        breaks.append(now)
    raise Overflow(f"envelope sweep did not terminate after {limit} events")


def envelope_breakpoints(real: Realization) -> Tuple[List[int], List[float]]:
    if real.n_heads == 0:
        raise EmptyRealization("realization has no heads")
    speeds = real.speeds
    if len(real.config.classes) == 1:
        serving, breaks = _line_breakpoints(real, real.config.classes[0].v)
    else:
        serving, breaks = _sweep_breakpoints(real, speeds)

    # heights at the window ends and at every breakpoint
    probes = [(serving[0], real.config.t_start), (serving[-1], real.config.t_end)]
    probes += [(serving[k], s) for k, s in enumerate(breaks)]
    idx = np.array([p[0] for p in probes])
    at = np.array([p[1] for p in probes])
    peak = float(np.max(bird_heights(real.t[idx], real.h[idx], speeds[idx], at)))
    if peak > real.window.h_max:
        real.overflow_flag = True
        logger.warning(f"replica {real.replica}: envelope reaches {peak:.4f} above h_max={real.window.h_max:.4f}")
    return serving, breaks


def lower_envelope(real: Realization) -> List[EnvelopeSegment]:
    serving, breaks = envelope_breakpoints(real)
    edges = [real.config.t_start] + breaks + [real.config.t_end]
    return [
        EnvelopeSegment(t_from=edges[k], t_to=edges[k + 1], serving=real.head(i)) for k, i in enumerate(serving)
    ]


def classify(
    event: Optional[HandoverEvent], prev_segment: EnvelopeSegment, next_segment: EnvelopeSegment
) -> HandoverType:
    prev, nxt = prev_segment.serving, next_segment.serving
    q = 1 if nxt.t >= prev.t else 2
    return HandoverType(q=q, tau_p=prev.cls, tau_n=nxt.cls)


def _matches(real: Realization, head: HeadPoint) -> np.ndarray:
    return (real.t == head.t) & (real.h == head.h) & (real.cls == head.cls)


def check_void(real: Realization, s: float, h: float, involved: List[HeadPoint], speeds=None) -> None:
    """Raise VoidViolation if some head lies in its class half-ellipse under (s, h)"""
    speeds = real.speeds if speeds is None else speeds
    inside = speeds**2 * (real.t - s) ** 2 + real.h**2 < (h * (1.0 - VOID_RTOL)) ** 2
    for head in involved:
        inside &= ~_matches(real, head)
    if np.any(inside):
        culprit = real.head(int(np.flatnonzero(inside)[0]))
        raise VoidViolation(f"head {culprit} lies under the handover at s={s}, h={h}")


def extract_handovers(segments: List[EnvelopeSegment], real: Realization) -> List[HandoverEvent]:
    """One event per interior breakpoint, each checked against the void condition"""
    if real.overflow_flag:
        raise Overflow("envelope exceeds h_max; resample with a larger window")
    speeds = real.speeds
    lookup = real.config.speeds
    lo = real.config.t_start + real.window.guard
    hi = real.config.t_end - real.window.guard
    events = []
    for prev_seg, next_seg in zip(segments, segments[1:]):
        s = prev_seg.t_to
        p, n = prev_seg.serving, next_seg.serving
        h = float(bird_heights(n.t, n.h, lookup[n.cls], s))
        check_void(real, s, h, [p, n], speeds)
        events.append(
            HandoverEvent(
                s=s,
                h=h,
                prev_head=p,
                next_head=n,
                type=classify(None, prev_seg, next_seg),
                boundary=not (lo <= s <= hi),
                replica=real.replica,
            )
        )
    return events


def visible_heads(segments: List[EnvelopeSegment]) -> List[HeadPoint]:
    """Serving heads whose apex lies in their own segment, in envelope order"""
    seen: Set[Tuple[float, float, int]] = set()
    visible = []
    for seg in segments:
        head = seg.serving
        key = (head.t, head.h, head.cls)
        if seg.t_from <= head.t <= seg.t_to and key not in seen:
            seen.add(key)
            visible.append(head)
    return visible


def distances_at(t: float, real: Realization) -> np.ndarray:
    return np.sort(bird_heights(real.t, real.h, real.speeds, t))


def shift_realization(real: Realization, dt: float) -> Realization:
    """Same heads and window moved by dt in time"""
    config = real.config.model_copy(update={"window": (real.config.t_start + dt, real.config.t_end + dt)})
    window = real.window.model_copy(update={"t_lo": real.window.t_lo + dt, "t_hi": real.window.t_hi + dt})
    return Realization(
        t=real.t + dt, h=real.h.copy(), cls=real.cls.copy(), config=config, window=window, replica=real.replica
    )


def simulate_replica(
    config: ScenarioConfig,
    replica: int = 0,
    max_retries: int = MAX_OVERFLOW_RETRIES,
    rng_factory: Optional[Callable[[int], np.random.Generator]] = None,
) -> ReplicaOutput:
    """Sample heads, compute the envelope and extract events for one replica.

    An envelope that climbs above h_max is resampled on a window with h_max
    doubled, at most ``max_retries`` times.
    """
    window = size_window(config)
    for attempt in range(max_retries + 1):
        if rng_factory is not None:
            rng = rng_factory(attempt)
        else:
            rng = replica_rng(config.seed, replica, STREAM_HEADS, attempt)
        real = sample_heads(config, window, rng, replica)
        segments = lower_envelope(real)
        if not real.overflow_flag:
            events = extract_handovers(segments, real)
            return ReplicaOutput(replica=replica, realization=real, segments=segments, events=events, retries=attempt)
        logger.warning(f"replica {replica}: overflow on attempt {attempt}, doubling h_max")
        window = enlarge_window(config, window)
    raise Overflow(f"replica {replica}: envelope above h_max after {max_retries} retries")
