import logging
import time
from typing import Any, Dict, Optional

from src.models.scenario_model import RunManifest
from src.services.simulation_service import SimulationService
from src.utils.errors import EXIT_OK, EXIT_VALIDATION
from src.utils.result_store import ResultStore
from src.utils.validators import RunArgsValidator, require

logger = logging.getLogger(__name__)


def cmd_validate(
    suite: str,
    out_dir: Optional[str] = None,
    threads: Optional[int] = None,
    service: Optional[SimulationService] = None,
) -> Dict[str, Any]:
    """Run the acceptance suite and write validation.json"""
    suite = require(RunArgsValidator.validate_suite(suite))
    start = time.perf_counter()
    store = ResultStore(out_dir)
    service = service or SimulationService(threads=threads)

    result = service.validate(suite)
    if not result["success"]:
        raise result["exception"]

    payload = {"suite": suite, "passed": result["passed"], "criteria": result["criteria"]}
    store.write_json("validation.json", payload)
    failed = [c["criterion"] for c in result["criteria"] if not c["passed"]]
    notes = [f"failed criteria: {failed}"] if failed else []
    store.write_manifest(
        RunManifest(subcommand="validate", wall_clock_seconds=time.perf_counter() - start, notes=notes)
    )
    return payload


def run(args) -> int:
    threads = require(RunArgsValidator.validate_threads(args.threads)) if args.threads else None
    payload = cmd_validate(args.suite, args.out, threads)
    if not payload["passed"]:
        logger.warning("validation failed")
        return EXIT_VALIDATION
    return EXIT_OK
