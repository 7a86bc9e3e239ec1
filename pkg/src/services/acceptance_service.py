"""End-to-end acceptance criteria.

Each criterion returns ``{"criterion", "name", "passed", "details"}``. The
``full`` suite runs at the documented sample sizes; ``quick`` runs the same
checks on smaller samples with looser tolerances and is what CI uses.
"""

from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np

from src.models.handover_model import RadialBird, all_types
from src.models.report_model import PalmSampleSet
from src.models.scenario_model import (
    DirectionLaw,
    HeadPoint,
    HeadWindow,
    Realization,
    ScenarioConfig,
    SpeedClass,
)
from src.services import analytics_service as analytics
from src.services import palm_service as palm
from src.services.envelope_service import extract_handovers, lower_envelope
from src.services.markov_service import run_chain
from src.services.point_process_service import displace, sample_planar_stations, station_positions
from src.utils import stats
from src.utils.errors import ConfigError, HandoverLabError
from src.utils.geometry import (
    bird_heights,
    half_ball_union_area,
    half_ellipse_union_area,
    hyperbola_extra_area,
)
from src.utils.rng import STREAM_MARKOV, STREAM_STATIONS, make_rng

logger = logging.getLogger(__name__)

P_MIN = 0.01
ORACLE_CHUNK = 1_000_000
AREA_POINTS_CAP = 20_000_000

SUITES: Dict[str, Dict[str, Any]] = {
    "full": {
        "replicas": 20,
        "window": (0.0, 220.0),
        "n_typical": 260,
        "rate_tol": 0.02,
        "mean_tol": 0.02,
        "visible_tol": 0.03,
        "type_tol": 0.03,
        "min_gof": 5000,
        "mc_samples": 400_000,
        "area_instances": 100,
        "area_points": 1_000_000,
        "area_tol": 5e-3,
        "laplace_tol": 0.02,
        "slope_tol": 0.03,
        "chain_steps": 5000,
        "chain_steps_two_speed": 100_000,
        "envelope_instances": 200,
        "envelope_grid": 200_000,
        "displacement_replicas": 500,
        "seed": 20240601,
    },
    "quick": {
        "replicas": 4,
        "window": (0.0, 220.0),
        "n_typical": 300,
        "rate_tol": 0.05,
        "mean_tol": 0.04,
        "visible_tol": 0.08,
        "type_tol": 0.15,
        "min_gof": 1000,
        "mc_samples": 100_000,
        "area_instances": 20,
        "area_points": 200_000,
        "area_tol": 2e-2,
        "laplace_tol": 0.05,
        "slope_tol": 0.05,
        "chain_steps": 1000,
        "chain_steps_two_speed": 3000,
        "envelope_instances": 30,
        "envelope_grid": 50_000,
        "displacement_replicas": 100,
        "seed": 20240601,
    },
}


def _criterion(number: int, name: str, passed: bool, **details: Any) -> Dict[str, Any]:
    return {"criterion": number, "name": name, "passed": bool(passed), "details": details}


def _rel(value: float, target: float) -> float:
    return abs(value - target) / abs(target)


def _required_points(fraction: float, tol: float, floor: int, cap: int) -> int:
    """Sample size that puts the relative standard error of a hit fraction at tol / 4"""
    if fraction <= 0:
        return cap
    return int(min(cap, max(floor, math.ceil(16.0 * (1.0 - fraction) / (fraction * tol**2)))))


def _mc_area(
    member: Callable[[np.ndarray, np.ndarray], np.ndarray],
    t_lo: float,
    t_hi: float,
    u_hi: float,
    n_points: int,
    rng: np.random.Generator,
) -> float:
    hits = 0
    left = n_points
    while left > 0:
        m = min(left, ORACLE_CHUNK)
        t = rng.uniform(t_lo, t_hi, m)
        u = rng.uniform(0.0, u_hi, m)
        hits += int(np.count_nonzero(member(t, u)))
        left -= m
    return hits / n_points * (t_hi - t_lo) * u_hi


def union_area_oracle(
    s1: float, l1: float, s2: float, l2: float, v: float, n_points: int, rng: np.random.Generator
) -> float:
    """Monte Carlo area of two half-ellipses by membership counting"""
    t_lo = min(s1 - l1 / v, s2 - l2 / v)
    t_hi = max(s1 + l1 / v, s2 + l2 / v)

    def member(t, u):
        return (v**2 * (t - s1) ** 2 + u**2 < l1**2) | (v**2 * (t - s2) ** 2 + u**2 < l2**2)

    return _mc_area(member, t_lo, t_hi, max(l1, l2), n_points, rng)


def hyperbola_box(slow: RadialBird, s_a: float, s_b: float, v1: float) -> Tuple[float, float, float]:
    ua, ub = slow.height(s_a), slow.height(s_b)
    return s_a - ua / v1, s_b + ub / v1, max(ua, ub)


def hyperbola_area_oracle(
    slow: RadialBird, s_a: float, s_b: float, v1: float, n_points: int, rng: np.random.Generator
) -> float:
    """Monte Carlo area of the fast half-ellipses over [s_a, s_b] minus the two end ones.

    A point lies under some half-ellipse iff it lies under the one centred at
    the clipped minimizer of v1^2 (t - s)^2 - h(s)^2, which is convex in s.
    """
    v2, t2, h2 = slow.v, slow.head.t, slow.head.h
    d = v1**2 - v2**2
    ua, ub = slow.height(s_a), slow.height(s_b)
    t_lo, t_hi, top = hyperbola_box(slow, s_a, s_b, v1)

    def member(t, u):
        s_star = np.clip((v1**2 * t - v2**2 * t2) / d, s_a, s_b)
        under = v1**2 * (t - s_star) ** 2 + u**2 < v2**2 * (s_star - t2) ** 2 + h2**2
        in_a = v1**2 * (t - s_a) ** 2 + u**2 < ua**2
        in_b = v1**2 * (t - s_b) ** 2 + u**2 < ub**2
        return under & ~in_a & ~in_b

    return _mc_area(member, t_lo, t_hi, top, n_points, rng)


def envelope_oracle(real: Realization, grid: int) -> Tuple[List[int], List[float]]:
    """Serving indices from a dense grid, breakpoints refined by bisection"""
    t0, t1 = real.config.t_start, real.config.t_end
    ts = np.linspace(t0, t1, grid)
    speeds = real.speeds
    heights = bird_heights(real.t[:, None], real.h[:, None], speeds[:, None], ts[None, :])
    best = np.argmin(heights, axis=0)
    serving = [int(best[0])]
    cells = [0]
    for k in range(1, grid):
        if best[k] != serving[-1]:
            serving.append(int(best[k]))
            cells.append(k)
    breaks = []
    for a, b, k in zip(serving, serving[1:], cells[1:]):
        lo, hi = ts[k - 1], ts[k]

        def diff(x: float) -> float:
            return float(
                bird_heights(real.t[b], real.h[b], speeds[b], x) - bird_heights(real.t[a], real.h[a], speeds[a], x)
            )

        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if diff(mid) < 0:
                hi = mid
            else:
                lo = mid
            if hi - lo < 1e-13 * max(1.0, abs(mid)):
                break
        breaks.append(0.5 * (lo + hi))
    return serving, breaks


class AcceptanceSuite:
    """Runs the numbered criteria against a simulation service"""

    def __init__(self, service: Any, suite: str = "quick", overrides: Optional[Dict[str, Any]] = None):
        if suite not in SUITES:
            raise ConfigError(f"unknown suite {suite}")
        self.service = service
        self.suite = suite
        self.p = {**SUITES[suite], **(overrides or {})}
        self._sets: Dict[str, PalmSampleSet] = {}

    def _config(self, classes: Sequence[Dict[str, float]], seed_offset: int = 0) -> ScenarioConfig:
        return ScenarioConfig.model_validate(
            {"classes": list(classes), "window": list(self.p["window"]), "seed": self.p["seed"] + seed_offset}
        )

    def _sample_set(self, key: str, config: ScenarioConfig) -> PalmSampleSet:
        if key not in self._sets:
            outputs = self.service.run_replicas(config, self.p["replicas"])
            self._sets[key] = palm.collect(outputs, n_typical=self.p["n_typical"])
        return self._sets[key]

    def single(self) -> Tuple[ScenarioConfig, PalmSampleSet]:
        config = self._config([{"v": 1.0, "lambda": 1.0}])
        return config, self._sample_set("single", config)

    def two_speed(self) -> Tuple[ScenarioConfig, PalmSampleSet]:
        config = self._config([{"v": 2.0, "lambda": 0.5}, {"v": 1.0, "lambda": 0.5}], seed_offset=1)
        return config, self._sample_set("two_speed", config)

    def run(self, only: Optional[Sequence[int]] = None) -> List[Dict[str, Any]]:
        checks: List[Callable[[], Dict[str, Any]]] = [
            self.handover_frequency,
            self.speed_intensity_scaling,
            self.handover_distance_law,
            self.visible_heads,
            self.two_speed_frequencies,
            self.degenerate_limit,
            self.typical_distance,
            self.interference,
            self.area_formulas,
            self.inter_handover_laplace,
            self.markov_equivalence,
            self.envelope_oracle,
            self.displacement,
            self.two_speed_h2_laplace,
        ]
        results = []
        for number, check in enumerate(checks, start=1):
            if only is not None and number not in only:
                continue
            logger.info(f"Criterion {number}: {check.__name__}")
            try:
                results.append(check())
            except HandoverLabError as e:
                results.append(_criterion(number, check.__name__, False, error=str(e)))
        return results

    def handover_frequency(self) -> Dict[str, Any]:
        config, sample_set = self.single()
        est = palm.estimate_rates(sample_set, config=config).estimates["lambda_V"]
        target = analytics.handover_frequency_single(1.0, 1.0)
        rel = _rel(est.value, target)
        passed = rel <= self.p["rate_tol"] and est.covers_analytic
        return _criterion(1, "handover_frequency", passed, estimate=est.model_dump(), relative_error=rel)

    def speed_intensity_scaling(self) -> Dict[str, Any]:
        config, sample_set = self.single()
        other_config = self._config([{"v": 0.5, "lambda": 4.0}], seed_offset=2)
        other = self._sample_set("scaled", other_config)
        a = palm.estimate_rates(sample_set, config=config).estimates["lambda_V"]
        b = palm.estimate_rates(other, config=other_config).estimates["lambda_V"]
        test = stats.two_sample_z(a.value, a.se, b.value, b.se, name="lambda_V scaling")
        return _criterion(2, "speed_intensity_scaling", test.p_value > P_MIN, test=test.model_dump(),
                          rates=[a.value, b.value])

    def handover_distance_law(self) -> Dict[str, Any]:
        _, sample_set = self.single()
        report = palm.gof_tests(sample_set, 1.0, min_samples=self.p["min_gof"])
        ks = report.tests["handover_distance"]
        mean = report.estimates["handover_distance_mean"]
        rel = _rel(mean.value, mean.analytic)
        passed = ks.p_value > P_MIN and rel <= self.p["mean_tol"]
        return _criterion(3, "handover_distance_law", passed, ks=ks.model_dump(), mean=mean.model_dump(),
                          relative_error=rel)

    def visible_heads(self) -> Dict[str, Any]:
        config, sample_set = self.single()
        est = palm.estimate_rates(sample_set, config=config).estimates["visible_rate"]
        rel = _rel(est.value, analytics.visible_head_intensity(1.0, 1.0))
        law = analytics.palm_law("visible_head_distance", 1.0)
        ks = stats.ks_one_sample(sample_set.visible_heights, law.cdf, name="visible_head_distance")
        passed = rel <= self.p["visible_tol"] and ks.p_value > P_MIN
        return _criterion(4, "visible_heads", passed, estimate=est.model_dump(), relative_error=rel,
                          ks=ks.model_dump())

    def two_speed_frequencies(self) -> Dict[str, Any]:
        config, sample_set = self.two_speed()
        report = palm.estimate_rates(sample_set, config=config, n_samples=self.p["mc_samples"])
        per_type = {}
        ok = True
        for t in sample_set.type_order:
            est = report.estimates[f"type:{t.label}"]
            rel = _rel(est.value, est.analytic)
            per_type[t.label] = {"value": est.value, "analytic": est.analytic, "relative_error": rel}
            ok &= rel <= self.p["type_tol"]
        symmetry = {k: v.model_dump() for k, v in report.tests.items() if k.startswith("symmetry:")}
        ok &= all(v["p_value"] > P_MIN for v in symmetry.values())
        return _criterion(5, "two_speed_frequencies", ok, types=per_type, symmetry=symmetry)

    def degenerate_limit(self) -> Dict[str, Any]:
        classes = [SpeedClass(index=1, v=1.0, lam=0.5), SpeedClass(index=2, v=0.999, lam=0.5)]
        total = analytics.total_frequency(classes, n_samples=self.p["mc_samples"], seed=self.p["seed"])
        target = analytics.handover_frequency_single(1.0, 1.0)
        rel = _rel(total.value, target)
        config = self._config([{"v": 1.0, "lambda": 0.5}, {"v": 0.999, "lambda": 0.5}], seed_offset=3)
        sample_set = self._sample_set("degenerate", config)
        est = palm.rate_estimate(sample_set.replica_event_counts, sample_set.replica_interior_times, total.value)
        passed = rel <= 0.01 and est.covers_analytic
        return _criterion(6, "degenerate_limit", passed, analytic=total.model_dump(), relative_error=rel,
                          estimate=est.model_dump())

    def typical_distance(self) -> Dict[str, Any]:
        _, sample_set = self.single()
        law = analytics.palm_law("typical_time_distance", 1.0)
        ks = stats.ks_one_sample(sample_set.typical_distances, law.cdf, name="typical_time_distance")
        grid = [0.5, 1.0, 2.0, 5.0, 10.0]
        order = analytics.laplace_order_check(1.0, grid)
        annuli = palm.typical_distance_check(sample_set, 1.0, [0.2, 0.4, 0.6, 0.8, 1.0], min_times=100)
        passed = ks.p_value > P_MIN and all(order) and annuli.p_value > P_MIN
        return _criterion(7, "typical_distance", passed, ks=ks.model_dump(), laplace_order=order,
                          annuli=annuli.model_dump())

    def interference(self) -> Dict[str, Any]:
        _, sample_set = self.single()
        test = palm.interference_check(sample_set, 1.0, [0.1, 0.2, 0.3, 0.4, 0.5], min_events=100)
        return _criterion(8, "interference", test.p_value > P_MIN, test=test.model_dump())

    def area_formulas(self) -> Dict[str, Any]:
        rng = make_rng(self.p["seed"], 9)
        n, floor, tol = self.p["area_instances"], self.p["area_points"], self.p["area_tol"]
        worst = {"ball": 0.0, "ellipse": 0.0, "hyperbola": 0.0}
        identity = 0.0
        skipped = 0
        for _ in range(n):
            s1, s2 = rng.uniform(-1.0, 1.0, 2)
            l1, l2 = rng.uniform(0.3, 1.5, 2)
            v = float(rng.uniform(0.5, 2.0))
            for key, speed in (("ball", 1.0), ("ellipse", v)):
                exact = half_ball_union_area(s1, l1, s2, l2) if key == "ball" else half_ellipse_union_area(
                    s1, l1, s2, l2, speed
                )
                box = (max(s1 + l1 / speed, s2 + l2 / speed) - min(s1 - l1 / speed, s2 - l2 / speed)) * max(l1, l2)
                points = _required_points(exact / box, tol, floor, AREA_POINTS_CAP)
                mc = union_area_oracle(s1, l1, s2, l2, speed, points, rng)
                worst[key] = max(worst[key], _rel(exact, mc))
            gap = half_ellipse_union_area(s1, l1, s2, l2, 1.0) - half_ball_union_area(s1, l1, s2, l2)
            identity = max(identity, abs(gap))

            v2 = float(rng.uniform(0.3, 1.0))
            v1 = v2 * float(rng.uniform(1.2, 3.0))
            head = HeadPoint(t=float(rng.uniform(-1.0, 1.0)), h=float(rng.uniform(0.2, 1.5)), cls=2)
            slow = RadialBird(head=head, v=v2)
            s_a = float(rng.uniform(-1.0, 1.0))
            s_b = s_a + float(rng.uniform(0.2, 2.0))
            exact = hyperbola_extra_area(slow, s_a, s_b, v1)
            t_lo, t_hi, top = hyperbola_box(slow, s_a, s_b, v1)
            fraction = exact / ((t_hi - t_lo) * top)
            if fraction < 0.01:
                skipped += 1
                continue
            mc = hyperbola_area_oracle(slow, s_a, s_b, v1, _required_points(fraction, tol, floor, AREA_POINTS_CAP), rng)
            worst["hyperbola"] = max(worst["hyperbola"], _rel(exact, mc))
        passed = all(w <= tol for w in worst.values()) and identity <= 1e-12
        return _criterion(
            9, "area_formulas", passed, worst_relative_error=worst, ellipse_ball_gap=identity,
            hyperbola_instances_too_thin=skipped,
        )

    def inter_handover_laplace(self) -> Dict[str, Any]:
        _, sample_set = self.single()
        n, seed = self.p["mc_samples"], self.p["seed"]
        at_zero = analytics.laplace_T_single(0.0, 1.0, 1.0, n, seed)
        rhos = [0.05, 0.1, 0.2]
        empirical = palm.empirical_laplace(sample_set.dwell_times, rhos)
        rows = []
        ok = abs(at_zero.value - 1.0) <= 0.01
        for rho, emp in zip(rhos, empirical):
            mc = analytics.laplace_T_single(rho, 1.0, 1.0, n, seed)
            rel = _rel(mc.value, emp.value)
            rows.append({"rho": rho, "quadrature": mc.value, "empirical": emp.value, "relative_error": rel})
            ok &= rel <= self.p["laplace_tol"]
        slope = analytics.laplace_T_slope(0.01, 1.0, 1.0, n, seed)
        slope_rel = _rel(slope.value, math.pi / 4.0)
        ok &= slope_rel <= self.p["slope_tol"]
        return _criterion(10, "inter_handover_laplace", ok, at_zero=at_zero.model_dump(), grid=rows,
                          slope=slope.model_dump(), slope_relative_error=slope_rel)

    def markov_equivalence(self) -> Dict[str, Any]:
        config, direct = self.single()
        chain = run_chain(self.p["chain_steps"], config, make_rng(self.p["seed"], STREAM_MARKOV, 1))
        ks1 = stats.ks_two_sample([s[1] for s in chain], direct.dwell_times, name="single_speed_dwell")

        config2, direct2 = self.two_speed()
        chain2 = run_chain(self.p["chain_steps_two_speed"], config2, make_rng(self.p["seed"], STREAM_MARKOV, 2))
        dwell2 = [s[1] for s in chain2]
        ks2 = stats.ks_two_sample(dwell2, direct2.dwell_times, name="two_speed_dwell")
        order = all_types(2)
        counts = palm.count_transitions(order, [s[0].type for s in chain2])
        table = palm.transition_table(order, counts, min_pairs=1)
        support_ok = not table["forbidden_observed"]
        if self.suite == "full":
            support_ok &= not table["allowed_missing"]
        passed = ks1.p_value > P_MIN and ks2.p_value > P_MIN and support_ok
        return _criterion(11, "markov_equivalence", passed, single=ks1.model_dump(), two_speed=ks2.model_dump(),
                          forbidden_observed=table["forbidden_observed"], allowed_missing=table["allowed_missing"])

    def envelope_oracle(self) -> Dict[str, Any]:
        rng = make_rng(self.p["seed"], 12)
        mismatches = []
        worst = 0.0
        for k in range(self.p["envelope_instances"]):
            real = self._random_realization(rng, k)
            segments = lower_envelope(real)
            extract_handovers(segments, real)
            serving = [int(np.flatnonzero((real.t == s.serving.t) & (real.h == s.serving.h))[0]) for s in segments]
            breaks = [s.t_to for s in segments[:-1]]
            o_serving, o_breaks = envelope_oracle(real, self.p["envelope_grid"])
            if serving != o_serving:
                mismatches.append(k)
                continue
            if breaks:
                worst = max(worst, float(np.max(np.abs(np.array(breaks) - np.array(o_breaks)))))
        passed = not mismatches and worst <= 1e-9
        return _criterion(12, "envelope_oracle", passed, mismatched_instances=mismatches, worst_breakpoint_gap=worst)

    def _random_realization(self, rng: np.random.Generator, k: int) -> Realization:
        n_classes = int(rng.integers(1, 4))
        speeds = np.sort(rng.uniform(0.5, 2.0, n_classes))[::-1]
        if n_classes > 1 and np.any(np.diff(speeds) > -0.05):
            speeds = np.linspace(2.0, 0.5, n_classes)
        classes = [{"v": float(v), "lambda": 1.0} for v in speeds]
        config = ScenarioConfig.model_validate({"classes": classes, "window": [-5.0, 5.0], "seed": k})
        n = int(rng.integers(2, 61))
        t = rng.uniform(-10.0, 10.0, n)
        h = rng.uniform(0.05, 3.0, n)
        cls = rng.integers(1, n_classes + 1, n)
        heads = [HeadPoint(t=float(a), h=float(b), cls=int(c)) for a, b, c in zip(t, h, cls)]
        window = HeadWindow(t_lo=-10.0, t_hi=10.0, h_max=1e9, guard=0.0)
        return Realization.from_heads(heads, config, window, replica=k)

    def displacement(self) -> Dict[str, Any]:
        law = DirectionLaw(kind="uniform")
        edges = np.linspace(-5.0, 5.0, 6)
        counts = []
        for r in range(self.p["displacement_replicas"]):
            rng = make_rng(self.p["seed"], STREAM_STATIONS, r)
            stations = displace(sample_planar_stations(1.0, 20.0, law, rng), 10.0)
            xy = station_positions(stations)
            hist, _, _ = np.histogram2d(xy[:, 0], xy[:, 1], bins=[edges, edges])
            counts.append(hist.ravel())
        counts = np.asarray(counts)
        expected = np.full(25, counts.shape[0] * 4.0)
        chi = stats.chi_square(counts.sum(axis=0), expected, name="displaced_box_counts")
        dispersion = stats.poisson_dispersion(counts.ravel(), name="displaced_dispersion")
        passed = chi.p_value > P_MIN and dispersion.p_value > P_MIN
        return _criterion(13, "displacement", passed, chi_square=chi.model_dump(), dispersion=dispersion.model_dump())

    def two_speed_h2_laplace(self) -> Dict[str, Any]:
        config, sample_set = self.two_speed()
        n, seed = self.p["mc_samples"], self.p["seed"]
        at_zero = analytics.mixed_H2_laplace(0.0, config.classes, n, seed)
        gamma = math.pi * config.total_lambda
        mc = analytics.mixed_H2_laplace(gamma, config.classes, n, seed)
        emp = float(np.mean(np.exp(-gamma * sample_set.handover_distances**2)))
        rel = _rel(mc.value, emp)
        passed = abs(at_zero.value - 1.0) <= 0.01 and rel <= 0.02
        return _criterion(14, "two_speed_h2_laplace", passed, at_zero=at_zero.model_dump(),
                          quadrature=mc.model_dump(), empirical=emp, relative_error=rel)
