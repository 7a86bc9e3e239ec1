import logging
import time
from typing import Optional

from src.models.handover_model import HandoverType
from src.models.scenario_model import RunManifest, ScenarioConfig
from src.services.simulation_service import SimulationService
from src.utils.errors import ConfigError
from src.utils.result_store import ResultStore
from src.utils.validators import ScenarioValidator

logger = logging.getLogger(__name__)

CHAIN_COLUMNS = ["step", "h_l", "t_r", "h_r", "q", "tau_p", "tau_n", "old_label", "dwell", "h"]


def cmd_markov(
    config: ScenarioConfig,
    n_steps: int,
    out_dir: Optional[str] = None,
    burn_in: Optional[float] = None,
    service: Optional[SimulationService] = None,
) -> RunManifest:
    """Run the handover chain; writes chain.csv and transition_matrix.json"""
    if n_steps < 1:
        raise ConfigError("steps must be at least 1")
    start = time.perf_counter()
    store = ResultStore(out_dir)
    service = service or SimulationService()

    result = service.markov(config, n_steps, burn_in=burn_in)
    if not result["success"]:
        raise result["exception"]

    index = config.classes[0].index
    pure = HandoverType(q=1, tau_p=index, tau_n=index)
    rows = []
    for k, (state, dwell, h) in enumerate(result["trajectory"]):
        t = state.type or pure
        rows.append([k, state.h_l, state.t_r, state.h_r, t.q, t.tau_p, t.tau_n, t.old_label, dwell, h])
    store.write_csv("chain.csv", CHAIN_COLUMNS, rows)
    store.write_json(
        "transition_matrix.json",
        {"mean_dwell": result["mean_dwell"], "transitions": result["transitions"], "notes": result["notes"]},
    )
    manifest = RunManifest(
        config=config,
        subcommand="markov",
        wall_clock_seconds=time.perf_counter() - start,
        notes=result["notes"],
    )
    store.write_manifest(manifest)
    logger.info(f"markov: {n_steps} steps written to {store.out_dir}")
    return manifest


def run(args) -> int:
    config = ScenarioValidator.from_args(args)
    cmd_markov(config, args.steps, args.out, burn_in=args.burn_in)
    return 0
