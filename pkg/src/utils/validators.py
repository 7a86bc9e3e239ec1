from pathlib import Path
from typing import Any, Dict, Optional, Sequence
import logging

import orjson
from pydantic import ValidationError

from src.models.scenario_model import ScenarioConfig
from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)


class RunArgsValidator:
    """Validator for command-line run arguments"""

    MIN_REPLICAS = 1
    MAX_THREADS = 256
    SUITES = ("quick", "full")
    QUERIES = ("frequency", "law", "mixed", "laplace_T", "laplace_H2", "selftest")

    @staticmethod
    def validate_replicas(replicas: Optional[int]) -> Dict[str, Any]:
        """Validate replica count"""
        if replicas is None:
            return {"valid": True, "value": 1}

        try:
            replicas = int(replicas)
        except (ValueError, TypeError):
            return {"valid": False, "error": "Replicas must be a valid integer"}

        if replicas < RunArgsValidator.MIN_REPLICAS:
            return {
                "valid": False,
                "error": f"Replicas must be at least {RunArgsValidator.MIN_REPLICAS}",
            }

        return {"valid": True, "value": replicas}

    @staticmethod
    def validate_threads(threads: Optional[int]) -> Dict[str, Any]:
        """Validate worker count"""
        if threads is None:
            return {"valid": True, "value": 1}

        try:
            threads = int(threads)
        except (ValueError, TypeError):
            return {"valid": False, "error": "Threads must be a valid integer"}

        if threads < 1 or threads > RunArgsValidator.MAX_THREADS:
            return {
                "valid": False,
                "error": f"Threads must be between 1 and {RunArgsValidator.MAX_THREADS}",
            }

        return {"valid": True, "value": threads}

    @staticmethod
    def validate_window(window: Optional[Sequence[float]]) -> Dict[str, Any]:
        """Validate an observation window given as two numbers"""
        if window is None:
            return {"valid": True, "value": None}

        if len(window) != 2:
            return {"valid": False, "error": "Window needs exactly two values"}

        try:
            t0, t1 = float(window[0]), float(window[1])
        except (ValueError, TypeError):
            return {"valid": False, "error": "Window bounds must be numbers"}

        if not t0 < t1:
            return {"valid": False, "error": "Window must satisfy t_start < t_end"}

        return {"valid": True, "value": (t0, t1)}

    @staticmethod
    def validate_epsilon(epsilon: Optional[float]) -> Dict[str, Any]:
        """Validate the truncation budget"""
        if epsilon is None:
            return {"valid": True, "value": None}

        if not 0 < epsilon < 0.5:
            return {"valid": False, "error": "Epsilon must lie in (0, 0.5)"}

        return {"valid": True, "value": float(epsilon)}

    @staticmethod
    def validate_suite(suite: Optional[str]) -> Dict[str, Any]:
        if not suite:
            return {"valid": True, "value": "quick"}

        if suite not in RunArgsValidator.SUITES:
            return {
                "valid": False,
                "error": f"Suite must be one of: {', '.join(RunArgsValidator.SUITES)}",
            }

        return {"valid": True, "value": suite}

    @staticmethod
    def validate_query(query: Optional[str]) -> Dict[str, Any]:
        if not query:
            return {"valid": False, "error": "Query is required"}

        if query not in RunArgsValidator.QUERIES:
            return {
                "valid": False,
                "error": f"Query must be one of: {', '.join(RunArgsValidator.QUERIES)}",
            }

        return {"valid": True, "value": query}


class ScenarioValidator:
    """Loads scenario files and applies command-line overrides"""

    @staticmethod
    def load(path: Optional[str]) -> Dict[str, Any]:
        if not path:
            return {}
        try:
            raw = orjson.loads(Path(path).read_bytes())
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except orjson.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return raw

    @staticmethod
    def build_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> ScenarioConfig:
        """ScenarioConfig from a JSON file with non-None overrides applied on top"""
        data = ScenarioValidator.load(path)
        for key, value in (overrides or {}).items():
            if value is not None:
                data[key] = list(value) if key == "window" else value
        if "classes" not in data:
            raise ConfigError("config needs a 'classes' list")
        try:
            return ScenarioConfig.model_validate(data)
        except ValidationError as e:
            logger.error(f"Invalid scenario: {str(e)}")
            raise ConfigError(f"invalid scenario: {e}") from e

    @staticmethod
    def from_args(args: Any) -> ScenarioConfig:
        """ScenarioConfig from parsed command-line arguments"""
        overrides = {
            "seed": getattr(args, "seed", None),
            "window": require(RunArgsValidator.validate_window(getattr(args, "window", None))),
            "epsilon": require(RunArgsValidator.validate_epsilon(getattr(args, "epsilon", None))),
        }
        return ScenarioValidator.build_config(getattr(args, "config", None), overrides)


def require(result: Dict[str, Any]) -> Any:
    """Value of a validator result, or ConfigError with its message"""
    if not result["valid"]:
        raise ConfigError(result["error"])
    return result.get("value")
