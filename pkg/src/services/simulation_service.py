from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List, Optional, Sequence
import logging
import math
import os
import re
import time

import numpy as np
from pydantic import ValidationError

from src.models.handover_model import HandoverType, MarkovState, all_types
from src.models.report_model import PalmSampleSet, ReplicaOutput
from src.models.scenario_model import ScenarioConfig, SpeedClass
from src.services import analytics_service as analytics
from src.services import palm_service as palm
from src.services.acceptance_service import AcceptanceSuite
from src.services.envelope_service import simulate_replica, visible_heads
from src.services.markov_service import run_chain
from src.utils.errors import ConfigError, DomainError, HandoverLabError, InsufficientSamples
from src.utils.rng import STREAM_MARKOV, make_rng

logger = logging.getLogger(__name__)

DEFAULT_RHO_GRID = (0.05, 0.1, 0.2, 0.5, 1.0)
DEFAULT_OFFSETS = (0.1, 0.2, 0.3, 0.4, 0.5)
DEFAULT_N_TYPICAL = 200


def type_slug(t: HandoverType) -> str:
    """File-name friendly form of a type label, e.g. q1_2_1"""
    return f"q{t.q}_{t.tau_p}_{t.tau_n}"


class SimulationService:
    """Runs replicas and turns their events into reports for the command line"""

    def __init__(self, threads: Optional[int] = None, mc_samples: Optional[int] = None):
        self.threads = int(threads or os.getenv("HANDOVER_LAB_THREADS", "1"))
        self.mc_samples = int(mc_samples or os.getenv("HANDOVER_LAB_MC_SAMPLES", str(analytics.DEFAULT_SAMPLES)))

    def run_replicas(self, config: ScenarioConfig, replicas: int) -> List[ReplicaOutput]:
        """Replica outputs in replica order, whatever the worker count"""
        logger.info(f"Running {replicas} replicas on {self.threads} threads")
        if self.threads <= 1:
            return [simulate_replica(config, r) for r in range(replicas)]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(lambda r: simulate_replica(config, r), range(replicas)))

    def _envelope_summary(self, outputs: Sequence[ReplicaOutput]) -> Dict[str, Any]:
        per_replica = []
        for out in outputs:
            real = out.realization
            per_replica.append(
                {
                    "replica": out.replica,
                    "n_heads": real.n_heads,
                    "n_segments": len(out.segments),
                    "n_events": len(out.events),
                    "n_interior_events": len(out.interior_events),
                    "n_visible_heads": len(visible_heads(out.segments)),
                    "h_max": real.window.h_max,
                    "guard": real.window.guard,
                    "retries": out.retries,
                }
            )
        return {
            "replicas": per_replica,
            "total_events": sum(r["n_events"] for r in per_replica),
            "total_interior_events": sum(r["n_interior_events"] for r in per_replica),
            "retries": sum(r["retries"] for r in per_replica),
        }

    def simulate(self, config: ScenarioConfig, replicas: int) -> Dict[str, Any]:
        """Simulate replicas; events are ordered by (replica, s)"""
        try:
            start = time.perf_counter()
            outputs = self.run_replicas(config, replicas)
            events = [e for out in outputs for e in sorted(out.events, key=lambda e: e.s)]
            summary = self._envelope_summary(outputs)
            logger.info(f"Simulated {len(events)} events in {time.perf_counter() - start:.2f}s")
            return {
                "success": True,
                "outputs": outputs,
                "events": events,
                "summary": summary,
                "retries": summary["retries"],
            }
        except HandoverLabError as e:
            logger.error(f"Simulation failed: {str(e)}")
            return {"success": False, "error": str(e), "exception": e}

    def _histograms(self, sample_set: PalmSampleSet, config: ScenarioConfig) -> Dict[str, Dict[str, list]]:
        lam = config.total_lambda
        hat_law = analytics.palm_law("handover_distance", lam)
        upper = float(hat_law.quantile(0.999))
        hists = {"handover_distance": palm.histogram(sample_set.handover_distances, hat_law, upper=upper)}
        for key, samples in (
            ("visible_head_distance", sample_set.visible_heights),
            ("typical_time_distance", sample_set.typical_distances),
        ):
            if samples.size:
                hists[key] = palm.histogram(samples, analytics.palm_law(key, lam))
        if sample_set.dwell_times.size:
            hists["dwell"] = palm.histogram(sample_set.dwell_times)
        if len(config.classes) >= 2:
            for t in sample_set.type_order:
                samples = sample_set.distances_of(t)
                if samples.size:
                    hists[f"handover_distance_{type_slug(t)}"] = palm.histogram(samples, hat_law, upper=upper)
        return hists

    def palm(
        self,
        config: ScenarioConfig,
        replicas: int,
        n_typical: int = DEFAULT_N_TYPICAL,
        rho_grid: Sequence[float] = DEFAULT_RHO_GRID,
    ) -> Dict[str, Any]:
        """Palm estimates, goodness-of-fit tests and histogram data"""
        try:
            outputs = self.run_replicas(config, replicas)
            sample_set = palm.collect(outputs, n_typical=n_typical)
            lam = config.total_lambda
            report = palm.estimate_rates(sample_set, config=config, n_samples=self.mc_samples)
            try:
                report = report.merge(palm.gof_tests(sample_set, lam))
            except InsufficientSamples as e:
                report.notes.append(f"goodness of fit skipped: {e}")
            offsets = [d / math.sqrt(lam) for d in DEFAULT_OFFSETS]
            for name, check, grid in (
                ("interference_annuli", palm.interference_check, offsets),
                ("typical_annuli", palm.typical_distance_check, [2 * d for d in offsets]),
            ):
                try:
                    report.tests[name] = check(sample_set, lam, grid)
                except InsufficientSamples as e:
                    report.notes.append(f"{name} skipped: {e}")

            laplace = {}
            if sample_set.dwell_times.size:
                for rho, est in zip(rho_grid, palm.empirical_laplace(sample_set.dwell_times, rho_grid)):
                    laplace[f"{rho:g}"] = est.model_dump()
            transitions = None
            if len(config.classes) >= 2:
                try:
                    transitions = palm.transition_support(sample_set, min_pairs=1)
                except InsufficientSamples as e:
                    report.notes.append(f"transition table skipped: {e}")

            return {
                "success": True,
                "sample_set": sample_set,
                "report": report,
                "laplace_dwell": laplace,
                "transitions": transitions,
                "histograms": self._histograms(sample_set, config),
                "retries": sum(out.retries for out in outputs),
            }
        except HandoverLabError as e:
            logger.error(f"Palm estimation failed: {str(e)}")
            return {"success": False, "error": str(e), "exception": e}

    def analytic(self, query: str, params: Dict[str, Any]) -> Dict[str, Any]:
        """Closed forms and quadratures; ``params`` come straight from the command line"""
        try:
            n = int(params.get("mc_samples", self.mc_samples))
            seed = int(params.get("seed", 0))
            if query == "frequency":
                result = self._analytic_frequency(params, n, seed)
            elif query == "law":
                result = self._analytic_law(params)
            elif query == "mixed":
                classes = _classes_from_params(params)
                if len(classes) != 2:
                    raise DomainError("the mixed query needs exactly two classes")
                fast, slow = classes
                lam = fast.lam + slow.lam
                result = {
                    f"k={k}": analytics.mixed_frequency(k, fast, slow, lam, n, seed).model_dump() for k in (1, 2)
                }
            elif query == "laplace_T":
                lam, v = float(params.get("lambda", 1.0)), float(params.get("v", 1.0))
                rhos = _as_list(params.get("rho", list(DEFAULT_RHO_GRID)))
                result = {
                    "laplace": {
                        f"{r:g}": analytics.laplace_T_single(r, lam, v, n, seed).model_dump() for r in rhos
                    },
                    "slope": {
                        f"{r:g}": analytics.laplace_T_slope(r, lam, v, n, seed).model_dump() for r in rhos if r > 0
                    },
                    "mean_dwell": 1.0 / analytics.handover_frequency_single(lam, v),
                }
            elif query == "laplace_H2":
                classes = _classes_from_params(params)
                lam = sum(c.lam for c in classes)
                gammas = _as_list(params.get("gamma", [0.0, lam * math.pi]))
                law = analytics.palm_law("handover_distance_squared", lam)
                result = {
                    f"{g:g}": {
                        **analytics.mixed_H2_laplace(g, classes, n, seed).model_dump(),
                        "closed_form": law.laplace(g),
                    }
                    for g in gammas
                }
            elif query == "selftest":
                lam = float(params.get("lambda", 1.0))
                grid = _as_list(params.get("gamma", [0.5, 1.0, 2.0, 5.0, 10.0]))
                result = {
                    "identities": analytics.identity_selftests(),
                    "laplace_order": dict(zip((f"{g:g}" for g in grid), analytics.laplace_order_check(lam, grid))),
                }
            else:
                return {"success": False, "error": f"Unknown query: {query}"}
            return {"success": True, "query": query, "result": result}
        except HandoverLabError as e:
            logger.error(f"Analytic query {query} failed: {str(e)}")
            return {"success": False, "error": str(e), "exception": e}

    def _analytic_frequency(self, params: Dict[str, Any], n: int, seed: int) -> Dict[str, Any]:
        if "classes" not in params:
            lam, v = float(params.get("lambda", 1.0)), float(params.get("v", 1.0))
            return {"lambda_V": analytics.handover_frequency_single(lam, v)}
        classes = _classes_from_params(params)
        total = analytics.total_frequency(classes, n, seed)
        return {
            "lambda_V": total.value,
            "lambda_V_se": total.se,
            "types": {k: r.model_dump() for k, r in analytics.type_frequencies(classes, n, seed).items()},
            "visible_by_class": analytics.visible_head_intensity_by_class(classes),
        }

    def _analytic_law(self, params: Dict[str, Any]) -> Dict[str, Any]:
        lam = float(params.get("lambda", 1.0))
        names = _as_list(params.get("name", list(analytics.LAW_NAMES)), cast=str)
        xs = np.asarray(_as_list(params.get("x", [0.25, 0.5, 1.0])), dtype=float)
        gammas = _as_list(params.get("gamma", [lam * math.pi]))
        out = {}
        for name in names:
            law = analytics.palm_law(name, lam)
            out[name] = {
                "mean": law.mean,
                "second_moment": law.second_moment,
                "x": xs.tolist(),
                "pdf": np.asarray(law.pdf(xs), dtype=float).tolist(),
                "cdf": np.asarray(law.cdf(xs), dtype=float).tolist(),
                "laplace": {f"{g:g}": law.laplace(g) for g in gammas},
            }
        return out

    def markov(
        self,
        config: ScenarioConfig,
        n_steps: int,
        burn_in: Optional[float] = None,
        initial: Optional[MarkovState] = None,
    ) -> Dict[str, Any]:
        """Run the handover chain; two-speed runs also report the transition table"""
        try:
            rng = make_rng(config.seed, STREAM_MARKOV)
            trajectory = run_chain(n_steps, config, rng, burn_in=burn_in, initial=initial)
            notes = []
            if initial is None:
                notes.append("initial state taken from a burn-in simulation")
                logger.warning("Markov chain started from a burn-in state; discard early steps if needed")
            transitions = None
            if len(config.classes) == 2:
                order = all_types(2)
                counts = palm.count_transitions(order, [step[0].type for step in trajectory])
                transitions = palm.transition_table(order, counts, min_pairs=1)
            dwell = np.array([step[1] for step in trajectory], dtype=float)
            return {
                "success": True,
                "trajectory": trajectory,
                "transitions": transitions,
                "mean_dwell": float(dwell.mean()),
                "notes": notes,
            }
        except HandoverLabError as e:
            logger.error(f"Markov chain failed: {str(e)}")
            return {"success": False, "error": str(e), "exception": e}

    def validate(self, suite: str = "quick") -> Dict[str, Any]:
        """Run the acceptance criteria; ``success`` means the suite ran, ``passed`` that all criteria hold"""
        try:
            criteria = AcceptanceSuite(self, suite).run()
            passed = all(c["passed"] for c in criteria)
            for c in criteria:
                if not c["passed"]:
                    logger.warning(f"Criterion {c['criterion']} ({c['name']}) failed")
            return {"success": True, "suite": suite, "criteria": criteria, "passed": passed}
        except HandoverLabError as e:
            logger.error(f"Validation suite failed to run: {str(e)}")
            return {"success": False, "error": str(e), "exception": e}


def _as_list(value: Any, cast=float) -> List[Any]:
    if isinstance(value, (list, tuple)):
        return [cast(v) for v in value]
    if isinstance(value, str) and not re.fullmatch(r"[-+0-9.eE]+", value):
        return [cast(v) for v in value.split(",") if v]
    return [cast(value)]


def _classes_from_params(params: Dict[str, Any]) -> List[SpeedClass]:
    """Classes from a ``classes`` list, or from v1, v2, lambda1, lambda2"""
    if "classes" in params:
        try:
            config = ScenarioConfig.model_validate({"classes": params["classes"], "window": [0.0, 1.0]})
        except ValidationError as e:
            raise ConfigError(f"invalid classes: {e}") from e
        return list(config.classes)
    fast = SpeedClass(index=1, v=float(params.get("v1", 2.0)), lam=float(params.get("lambda1", 0.5)))
    slow = SpeedClass(index=2, v=float(params.get("v2", 1.0)), lam=float(params.get("lambda2", 0.5)))
    return [fast, slow]
