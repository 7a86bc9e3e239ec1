import logging
import time
from typing import Any, Dict, List, Optional

import orjson

from src.models.scenario_model import RunManifest
from src.services.simulation_service import SimulationService
from src.utils.errors import ConfigError
from src.utils.result_store import ResultStore
from src.utils.validators import RunArgsValidator, ScenarioValidator, require

logger = logging.getLogger(__name__)


def parse_params(pairs: Optional[List[str]]) -> Dict[str, Any]:
    """key=value pairs; values are read as JSON when they parse, else kept as text"""
    params: Dict[str, Any] = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"parameter {pair!r} is not key=value")
        key, raw = pair.split("=", 1)
        try:
            params[key.strip()] = orjson.loads(raw)
        except orjson.JSONDecodeError:
            params[key.strip()] = raw
    return params


def cmd_analytic(
    query: str,
    params: Dict[str, Any],
    out_dir: Optional[str] = None,
    service: Optional[SimulationService] = None,
) -> Dict[str, Any]:
    """Evaluate one analytic query and write analytic.json"""
    query = require(RunArgsValidator.validate_query(query))
    start = time.perf_counter()
    store = ResultStore(out_dir)
    service = service or SimulationService()

    result = service.analytic(query, params)
    if not result["success"]:
        if "exception" in result:
            raise result["exception"]
        raise ConfigError(result["error"])

    store.write_json("analytic.json", {"query": query, "params": params, "result": result["result"]})
    store.write_manifest(
        RunManifest(subcommand="analytic", wall_clock_seconds=time.perf_counter() - start)
    )
    return result["result"]


def run(args) -> int:
    params = parse_params(args.param)
    if args.config:
        config = ScenarioValidator.from_args(args)
        params.setdefault("classes", [{"v": c.v, "lambda": c.lam} for c in config.classes])
        params.setdefault("seed", config.seed)
    result = cmd_analytic(args.query, params, args.out)
    print(orjson.dumps(result, option=orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY).decode())
    return 0
