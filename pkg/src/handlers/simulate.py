import logging
import time
from typing import Optional

from src.models.scenario_model import RunManifest, ScenarioConfig
from src.services.simulation_service import SimulationService
from src.utils.result_store import ResultStore
from src.utils.validators import RunArgsValidator, ScenarioValidator, require

logger = logging.getLogger(__name__)


def cmd_simulate(
    config: ScenarioConfig,
    replicas: int,
    out_dir: Optional[str] = None,
    threads: Optional[int] = None,
    service: Optional[SimulationService] = None,
) -> RunManifest:
    """Simulate replicas and write events.csv, envelope_summary.json and manifest.json"""
    replicas = require(RunArgsValidator.validate_replicas(replicas))
    start = time.perf_counter()
    store = ResultStore(out_dir)
    service = service or SimulationService(threads=threads)

    result = service.simulate(config, replicas)
    if not result["success"]:
        raise result["exception"]

    store.write_events("events.csv", result["events"])
    store.write_json("envelope_summary.json", result["summary"])
    manifest = RunManifest(
        config=config,
        subcommand="simulate",
        replicas=replicas,
        wall_clock_seconds=time.perf_counter() - start,
        retries=result["retries"],
        overflows=result["retries"],
    )
    store.write_manifest(manifest)
    logger.info(f"simulate: {len(result['events'])} events written to {store.out_dir}")
    return manifest


def run(args) -> int:
    config = ScenarioValidator.from_args(args)
    threads = require(RunArgsValidator.validate_threads(args.threads)) if args.threads else None
    cmd_simulate(config, args.replicas, args.out, threads)
    return 0
