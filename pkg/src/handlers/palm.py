import logging
import time
from typing import Any, Dict, Optional

from src.models.scenario_model import RunManifest, ScenarioConfig
from src.services.simulation_service import DEFAULT_N_TYPICAL, SimulationService
from src.utils.result_store import ResultStore
from src.utils.validators import RunArgsValidator, ScenarioValidator, require

logger = logging.getLogger(__name__)

HIST_COLUMNS = ["bin_lo", "bin_hi", "count", "density", "pdf"]


def _hist_rows(hist: Dict[str, list]):
    edges = hist["edges"]
    for k, count in enumerate(hist["counts"]):
        yield [edges[k], edges[k + 1], count, hist["density"][k], hist["pdf"][k]]


def _type_labels(types) -> Dict[str, str]:
    return {t.label: t.old_label for t in types}


def cmd_palm(
    config: ScenarioConfig,
    replicas: int,
    out_dir: Optional[str] = None,
    threads: Optional[int] = None,
    n_typical: int = DEFAULT_N_TYPICAL,
    service: Optional[SimulationService] = None,
) -> RunManifest:
    """Palm estimates to palm_report.json, histogram data to hist_*.csv"""
    replicas = require(RunArgsValidator.validate_replicas(replicas))
    start = time.perf_counter()
    store = ResultStore(out_dir)
    service = service or SimulationService(threads=threads)

    result = service.palm(config, replicas, n_typical=n_typical)
    if not result["success"]:
        raise result["exception"]

    report = result["report"]
    sample_set = result["sample_set"]
    payload: Dict[str, Any] = {
        "summary": sample_set.summary(),
        "estimates": {k: v.model_dump() for k, v in report.estimates.items()},
        "tests": {k: v.model_dump() for k, v in report.tests.items()},
        "laplace_dwell": result["laplace_dwell"],
        "type_labels": _type_labels(sample_set.type_order),
        "notes": report.notes,
    }
    if result["transitions"] is not None:
        payload["transitions"] = result["transitions"]
    store.write_json("palm_report.json", payload)

    for name, hist in result["histograms"].items():
        store.write_csv(f"hist_{name}.csv", HIST_COLUMNS, _hist_rows(hist))

    manifest = RunManifest(
        config=config,
        subcommand="palm",
        replicas=replicas,
        wall_clock_seconds=time.perf_counter() - start,
        retries=result["retries"],
        overflows=result["retries"],
        notes=list(report.notes),
    )
    store.write_manifest(manifest)
    logger.info(f"palm: {sample_set.n_events} interior events summarized in {store.out_dir}")
    return manifest


def run(args) -> int:
    config = ScenarioValidator.from_args(args)
    threads = require(RunArgsValidator.validate_threads(args.threads)) if args.threads else None
    cmd_palm(config, args.replicas, args.out, threads, n_typical=args.typical)
    return 0
