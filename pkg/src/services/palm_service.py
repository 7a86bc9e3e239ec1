"""Ergodic Palm estimators over simulated replicas.

Everything here works on interior events only (events at least one guard
length inside the window), so the time averages are unbiased estimators of
the Palm quantities.
"""

from typing import Dict, List, Optional, Sequence
import logging
import math

import numpy as np

from src.models.handover_model import HandoverType, all_types
from src.models.report_model import Estimate, EstimateReport, PalmSampleSet, ReplicaOutput, TestResult
from src.models.scenario_model import ScenarioConfig
from src.services import analytics_service as analytics
from src.services.envelope_service import distances_at, visible_heads
from src.utils.errors import DomainError, InsufficientSamples, NoEvents
from src.utils.geometry import bird_heights
from src.utils.rng import STREAM_TYPICAL, replica_rng
from src.utils import stats

logger = logging.getLogger(__name__)

MIN_GOF_SAMPLES = 1000
MIN_TRANSITION_PAIRS = 10_000


def _type_order(config: ScenarioConfig) -> List[HandoverType]:
    return all_types(len(config.classes))


def collect(outputs: Sequence[ReplicaOutput], n_typical: int = 0) -> PalmSampleSet:
    """Pool interior events, dwell times, visible heads and typical-time distances.

    ``n_typical`` uniform times per replica are drawn in the window core from
    the replica's typical-time stream.
    """
    if not outputs:
        raise NoEvents("no replicas to collect")
    config = outputs[0].realization.config
    order = _type_order(config)
    position = {t: i for i, t in enumerate(order)}
    counts = np.zeros((len(order), len(order)), dtype=int)

    distances, types, dwell, dwell_types = [], [], [], []
    vis_h, vis_c = [], []
    typical, typical_all, typical_caps = [], [], []
    offsets, offset_index, caps = [], [], []
    n_events, n_visible, interior_times = [], [], []

    for out in outputs:
        real = out.realization
        if real.config != config:
            raise DomainError("replicas must share one scenario")
        lo = config.t_start + real.window.guard
        hi = config.t_end - real.window.guard
        h_max = real.window.h_max
        speeds = real.speeds
        events = sorted(out.interior_events, key=lambda e: e.s)

        for e in events:
            d = bird_heights(real.t, real.h, speeds, e.s)
            keep = d <= h_max
            for head in (e.prev_head, e.next_head):
                keep &= ~((real.t == head.t) & (real.h == head.h) & (real.cls == head.cls))
            d = d[keep]
            offsets.append(d - e.h)
            offset_index.append(np.full(d.size, len(distances), dtype=int))
            caps.append(h_max - e.h)
            distances.append(e.h)
            types.append(e.type)

        for a, b in zip(events, events[1:]):
            gap = b.s - a.s
            if gap > 0:
                dwell.append(gap)
                dwell_types.append(a.type)
            counts[position[a.type], position[b.type]] += 1

        visible = [p for p in visible_heads(out.segments) if lo <= p.t <= hi]
        vis_h.extend(p.h for p in visible)
        vis_c.extend(p.cls for p in visible)

        if n_typical > 0 and hi > lo:
            rng = replica_rng(config.seed, out.replica, STREAM_TYPICAL)
            for t in rng.uniform(lo, hi, n_typical):
                d = distances_at(float(t), real)
                typical.append(float(d[0]))
                typical_all.append(d[d <= h_max])
                typical_caps.append(h_max)

        n_events.append(len(events))
        n_visible.append(len(visible))
        interior_times.append(max(hi - lo, 0.0))

    if sum(n_events) == 0:
        raise NoEvents("no interior handover in any replica")
    logger.info(f"collected {sum(n_events)} interior events from {len(outputs)} replicas")

    return PalmSampleSet(
        handover_distances=np.asarray(distances, dtype=float),
        types=types,
        dwell_times=np.asarray(dwell, dtype=float),
        dwell_types=dwell_types,
        visible_heights=np.asarray(vis_h, dtype=float),
        visible_classes=np.asarray(vis_c, dtype=int),
        typical_distances=np.asarray(typical, dtype=float),
        type_order=order,
        transition_counts=counts,
        replica_event_counts=n_events,
        replica_visible_counts=n_visible,
        replica_interior_times=interior_times,
        interference_offsets=np.concatenate(offsets) if offsets else np.empty(0),
        interference_index=np.concatenate(offset_index) if offset_index else np.empty(0, dtype=int),
        interference_caps=np.asarray(caps, dtype=float),
        typical_all=np.concatenate(typical_all) if typical_all else np.empty(0),
        typical_caps=np.asarray(typical_caps, dtype=float),
    )


def rate_estimate(counts: Sequence[int], times: Sequence[float], analytic: Optional[float]) -> Estimate:
    """Pooled count / time, with a t interval across replicas when there are several"""
    total_t = float(sum(times))
    total_n = int(sum(counts))
    value = total_n / total_t
    usable = [(n, t) for n, t in zip(counts, times) if t > 0]
    if len(usable) >= 2 and len({t for _, t in usable}) == 1:
        _, se, lo, hi = stats.mean_ci([n / t for n, t in usable])
    else:
        se = math.sqrt(max(total_n, 1)) / total_t
        lo, hi = stats.normal_ci(value, se)
    return Estimate(value=value, se=se, ci_low=lo, ci_high=hi, analytic=analytic, n=total_n)


def _poisson_estimate(k: int, total_t: float, analytic: Optional[float]) -> Estimate:
    value = k / total_t
    se = math.sqrt(max(k, 1)) / total_t
    lo, hi = stats.normal_ci(value, se)
    return Estimate(value=value, se=se, ci_low=lo, ci_high=hi, analytic=analytic, n=k)


def estimate_rates(
    sample_set: PalmSampleSet,
    total_time: Optional[float] = None,
    config: Optional[ScenarioConfig] = None,
    n_samples: int = analytics.DEFAULT_SAMPLES,
) -> EstimateReport:
    """Handover, per-type and visible-head rates next to their analytic values"""
    total_t = sample_set.total_time if total_time is None else float(total_time)
    if total_t <= 0:
        raise DomainError("total interior time must be positive")
    report = EstimateReport()

    lam_v = None
    per_type: Dict[str, float] = {}
    visible_by_class: Dict[int, float] = {}
    if config is not None:
        if len(config.classes) == 1:
            c = config.classes[0]
            lam_v = analytics.handover_frequency_single(c.lam, c.v)
            per_type = {HandoverType(q=1, tau_p=c.index, tau_n=c.index).label: lam_v}
        else:
            freqs = analytics.type_frequencies(config.classes, n_samples=n_samples, seed=config.seed)
            per_type = {label: r.value for label, r in freqs.items()}
            lam_v = float(sum(per_type.values()))
        visible_by_class = analytics.visible_head_intensity_by_class(config.classes)

    times = sample_set.replica_interior_times
    if total_time is None:
        report.estimates["lambda_V"] = rate_estimate(sample_set.replica_event_counts, times, lam_v)
    else:
        report.estimates["lambda_V"] = _poisson_estimate(sample_set.n_events, total_t, lam_v)

    labels = [t.label for t in sample_set.types]
    for t in sample_set.type_order:
        k = labels.count(t.label)
        report.estimates[f"type:{t.label}"] = _poisson_estimate(k, total_t, per_type.get(t.label))

    analytic_visible = sum(visible_by_class.values()) if visible_by_class else None
    report.estimates["visible_rate"] = rate_estimate(sample_set.replica_visible_counts, times, analytic_visible)
    for index in sorted(set(int(c) for c in sample_set.visible_classes) | set(visible_by_class)):
        k = int(np.sum(sample_set.visible_classes == index))
        report.estimates[f"visible_rate:class{index}"] = _poisson_estimate(k, total_t, visible_by_class.get(index))

    if sample_set.dwell_times.size >= 2:
        mean, se, lo, hi = stats.mean_ci(sample_set.dwell_times)
        report.estimates["mean_dwell"] = Estimate(
            value=mean, se=se, ci_low=lo, ci_high=hi,
            analytic=(1.0 / lam_v) if lam_v else None, n=int(sample_set.dwell_times.size),
        )

    # reflection in time pairs [[1;s,f]] with [[1;f,s]] and [[2;f,s]] with [[2;s,f]]
    if config is not None and len(config.classes) >= 2:
        ordered = sorted(config.classes, key=lambda c: -c.v)
        for i, fast in enumerate(ordered):
            for slow in ordered[i + 1 :]:
                f, s = fast.index, slow.index
                for q, (a, b) in ((1, ((s, f), (f, s))), (2, ((f, s), (s, f)))):
                    la = HandoverType(q=q, tau_p=a[0], tau_n=a[1]).label
                    lb = HandoverType(q=q, tau_p=b[0], tau_n=b[1]).label
                    ka, kb = labels.count(la), labels.count(lb)
                    if ka + kb > 0:
                        report.tests[f"symmetry:{la}={lb}"] = stats.two_rate_test(ka, kb, name=f"{la} vs {lb}")
    return report


def gof_tests(sample_set: PalmSampleSet, lam: float, min_samples: int = MIN_GOF_SAMPLES) -> EstimateReport:
    """KS tests of the handover, visible-head and typical-time distance laws"""
    hat = sample_set.handover_distances
    if hat.size < min_samples:
        raise InsufficientSamples(f"need {min_samples} handover distances, have {hat.size}")
    report = EstimateReport()
    law = analytics.palm_law("handover_distance", lam)
    report.tests["handover_distance"] = stats.ks_one_sample(hat, law.cdf, name="handover_distance")
    mean, se, lo, hi = stats.mean_ci(hat)
    report.estimates["handover_distance_mean"] = Estimate(
        value=mean, se=se, ci_low=lo, ci_high=hi, analytic=law.mean, n=int(hat.size)
    )

    squared = analytics.palm_law("handover_distance_squared", lam)
    gamma = lam * math.pi
    values = np.exp(-gamma * hat**2)
    mean, se, lo, hi = stats.mean_ci(values)
    report.estimates["handover_distance_squared_laplace"] = Estimate(
        value=mean, se=se, ci_low=lo, ci_high=hi, analytic=squared.laplace(gamma), n=int(hat.size)
    )

    for key, samples in (
        ("visible_head_distance", sample_set.visible_heights),
        ("typical_time_distance", sample_set.typical_distances),
    ):
        if samples.size < min_samples:
            report.notes.append(f"{key}: {samples.size} samples, below {min_samples}; not tested")
            continue
        law = analytics.palm_law(key, lam)
        report.tests[key] = stats.ks_one_sample(samples, law.cdf, name=key)
    return report


def empirical_laplace(samples, rho_grid: Sequence[float]) -> List[Estimate]:
    """Mean of exp(-rho x) per grid point, with its standard error"""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise DomainError("empirical_laplace needs samples")
    out = []
    for rho in rho_grid:
        values = np.exp(-float(rho) * x)
        mean = float(values.mean())
        se = float(values.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
        lo, hi = stats.normal_ci(mean, se)
        out.append(Estimate(value=mean, se=se, ci_low=lo, ci_high=hi, n=int(x.size)))
    return out


def interference_check(
    sample_set: PalmSampleSet,
    lam: float,
    offsets_grid: Sequence[float],
    min_events: int = 1000,
) -> TestResult:
    """Counts of other distances in [h, h + d) against lambda pi ((h + d)^2 - h^2).

    Bins are consecutive offsets of the grid; only events whose cap (h_max
    minus handover distance) covers the largest offset are used.
    """
    edges = np.concatenate([[0.0], np.sort(np.asarray(offsets_grid, dtype=float))])
    usable = np.flatnonzero(sample_set.interference_caps >= edges[-1])
    if usable.size < min_events:
        raise InsufficientSamples(f"need {min_events} events with enough headroom, have {usable.size}")
    mask = np.isin(sample_set.interference_index, usable)
    observed, _ = np.histogram(sample_set.interference_offsets[mask], bins=edges)
    hat = sample_set.handover_distances[usable][:, None]
    outer = lam * math.pi * (hat + edges[None, 1:]) ** 2
    inner = lam * math.pi * (hat + edges[None, :-1]) ** 2
    expected = (outer - inner).sum(axis=0)
    return stats.chi_square(observed, expected, name="interference_annuli")


def typical_distance_check(
    sample_set: PalmSampleSet,
    lam: float,
    radii_grid: Sequence[float],
    min_times: int = 1000,
) -> TestResult:
    """Counts of distances in [0, r) at typical times against lambda pi r^2"""
    edges = np.concatenate([[0.0], np.sort(np.asarray(radii_grid, dtype=float))])
    n_times = int(np.sum(sample_set.typical_caps >= edges[-1]))
    if n_times < min_times or n_times != sample_set.typical_caps.size:
        raise InsufficientSamples(f"need {min_times} typical times with cap above {edges[-1]}")
    observed, _ = np.histogram(sample_set.typical_all, bins=edges)
    expected = n_times * lam * math.pi * np.diff(edges**2)
    return stats.chi_square(observed, expected, name="typical_annuli")


def allowed_transition(current: HandoverType, following: HandoverType) -> bool:
    """The next handover leaves the current serving class, and never twice with q = 2"""
    return following.tau_p == current.tau_n and not (current.q == 2 and following.q == 2)


def transition_support(sample_set: PalmSampleSet, min_pairs: int = MIN_TRANSITION_PAIRS) -> Dict[str, object]:
    return transition_table(sample_set.type_order, sample_set.transition_counts, min_pairs)


def count_transitions(order: Sequence[HandoverType], sequence: Sequence[HandoverType]) -> np.ndarray:
    position = {t: i for i, t in enumerate(order)}
    counts = np.zeros((len(order), len(order)), dtype=int)
    for a, b in zip(sequence, sequence[1:]):
        counts[position[a], position[b]] += 1
    return counts


def transition_table(
    order: Sequence[HandoverType], counts, min_pairs: int = MIN_TRANSITION_PAIRS
) -> Dict[str, object]:
    """Observed transition counts checked against the allowed-transition table"""
    counts = np.asarray(counts)
    total = int(counts.sum())
    if total < min_pairs:
        raise InsufficientSamples(f"need {min_pairs} consecutive event pairs, have {total}")
    allowed = np.array([[allowed_transition(a, b) for b in order] for a in order], dtype=bool)
    forbidden = [(order[i].label, order[j].label) for i, j in zip(*np.nonzero(~allowed & (counts > 0)))]
    missing = [(order[i].label, order[j].label) for i, j in zip(*np.nonzero(allowed & (counts == 0)))]
    if forbidden:
        logger.warning(f"forbidden transitions observed: {forbidden}")
    return {
        "order": [t.label for t in order],
        "counts": counts.tolist(),
        "allowed": allowed.astype(int).tolist(),
        "forbidden_observed": forbidden,
        "allowed_missing": missing,
        "pairs": total,
        "ok": not forbidden and not missing,
    }


def histogram(
    samples,
    law: Optional[analytics.PalmLaw] = None,
    bins: int = 40,
    upper: Optional[float] = None,
) -> Dict[str, list]:
    """Bin edges, counts, density and the analytic pdf at the bin centres"""
    x = np.asarray(samples, dtype=float)
    if upper is None:
        upper = float(law.quantile(0.999)) if law is not None else float(x.max(initial=1.0))
    edges = np.linspace(0.0, upper, bins + 1)
    counts, _ = np.histogram(x, bins=edges)
    widths = np.diff(edges)
    density = counts / (max(x.size, 1) * widths)
    centres = (edges[:-1] + edges[1:]) / 2.0
    pdf = law.pdf(centres) if law is not None else np.full(bins, np.nan)
    return {
        "edges": edges.tolist(),
        "counts": counts.tolist(),
        "density": density.tolist(),
        "pdf": np.asarray(pdf, dtype=float).tolist(),
    }
