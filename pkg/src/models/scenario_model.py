from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Any, Dict, List, Literal, Optional, Tuple
import math
import numpy as np


class SpeedClass(BaseModel):
    """One population of stations sharing a speed"""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    index: int = Field(..., ge=1, description="1-based class id, 1 is the fastest")
    v: float = Field(..., gt=0, description="Speed (distance per unit time)")
    lam: float = Field(..., ge=0, alias="lambda", description="Planar intensity")


class DirectionLaw(BaseModel):
    """Law of the station headings"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["uniform", "fixed"] = "uniform"
    theta: float = Field(default=0.0, description="Common heading for the fixed law")


class ScenarioConfig(BaseModel):
    """Station populations, observation window, truncation budget and seed"""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    classes: List[SpeedClass] = Field(..., min_length=1)
    window: Tuple[float, float] = Field(..., description="[t_start, t_end]")
    epsilon: float = Field(default=1e-3, gt=0, lt=0.5)
    direction_law: DirectionLaw = Field(default_factory=DirectionLaw)
    seed: int = Field(default=0, ge=0, lt=2**64)

    @model_validator(mode="before")
    @classmethod
    def assign_class_indices(cls, data: Any) -> Any:
        # Config files list classes as {v, lambda}; order them fastest first.
        if isinstance(data, dict) and isinstance(data.get("classes"), list):
            raw = data["classes"]
            if raw and all(isinstance(c, dict) and "index" not in c for c in raw):
                ordered = sorted(raw, key=lambda c: -float(c.get("v", 0.0)))
                data = {
                    **data,
                    "classes": [{**c, "index": i + 1} for i, c in enumerate(ordered)],
                }
        if isinstance(data, dict) and isinstance(data.get("direction_law"), str):
            data = {**data, "direction_law": _parse_direction_law(data["direction_law"])}
        return data

    @field_validator("window")
    @classmethod
    def validate_window(cls, v):
        if not v[0] < v[1]:
            raise ValueError("window must satisfy t_start < t_end")
        return v

    @field_validator("classes")
    @classmethod
    def validate_classes(cls, v):
        indices = [c.index for c in v]
        if len(set(indices)) != len(indices):
            raise ValueError("class indices must be distinct")
        speeds = [c.v for c in sorted(v, key=lambda c: c.index)]
        if any(a <= b for a, b in zip(speeds, speeds[1:])):
            raise ValueError("speeds must be strictly decreasing in the class index")
        if sum(c.lam for c in v) <= 0:
            raise ValueError("total intensity must be positive")
        return sorted(v, key=lambda c: c.index)

    @property
    def t_start(self) -> float:
        return self.window[0]

    @property
    def t_end(self) -> float:
        return self.window[1]

    @property
    def total_lambda(self) -> float:
        return float(sum(c.lam for c in self.classes))

    @property
    def v_min(self) -> float:
        return min(c.v for c in self.classes)

    @property
    def speeds(self) -> Dict[int, float]:
        return {c.index: c.v for c in self.classes}

    def class_by_index(self, index: int) -> SpeedClass:
        for c in self.classes:
            if c.index == index:
                return c
        raise KeyError(index)


def _parse_direction_law(text: str) -> Dict[str, Any]:
    # "uniform" or "fixed(0.3)"
    text = text.strip()
    if text == "uniform":
        return {"kind": "uniform"}
    if text.startswith("fixed(") and text.endswith(")"):
        return {"kind": "fixed", "theta": float(text[6:-1])}
    raise ValueError(f"Unknown direction law: {text}")


class HeadPoint(BaseModel):
    """Nearest time and distance of a station to the user"""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    t: float
    h: float = Field(..., ge=0)
    cls: int = Field(default=1, ge=1, alias="class")


class PlanarStation(BaseModel):
    """Station at distance R with heading theta; alpha is the relative angle"""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    R: float = Field(..., ge=0)
    alpha: float = Field(..., ge=-math.pi, lt=math.pi)
    cls: int = Field(default=1, ge=1, alias="class")
    theta: float = Field(default=0.0, description="Absolute heading")
    v: float = Field(default=1.0, gt=0)

    @property
    def position(self) -> Tuple[float, float]:
        phi = self.theta - self.alpha
        return self.R * math.cos(phi), self.R * math.sin(phi)


class HeadWindow(BaseModel):
    """Truncated domain of the head process"""

    model_config = ConfigDict(frozen=True)

    t_lo: float
    t_hi: float
    h_max: float = Field(..., gt=0)
    guard: float = Field(..., ge=0, description="h_max / min speed")
    expected_counts: Dict[int, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def check_bounds(self):
        if not self.t_lo < self.t_hi:
            raise ValueError("t_lo must be below t_hi")
        return self


class Realization(BaseModel):
    """Heads of all classes on the window, as parallel arrays sorted by t"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    t: np.ndarray
    h: np.ndarray
    cls: np.ndarray
    config: ScenarioConfig
    window: HeadWindow
    overflow_flag: bool = False
    replica: int = 0

    @model_validator(mode="after")
    def check_arrays(self):
        if not (len(self.t) == len(self.h) == len(self.cls)):
            raise ValueError("head arrays must have equal length")
        if len(self.t) > 1 and np.any(np.diff(self.t) < 0):
            raise ValueError("heads must be sorted by t")
        return self

    @property
    def n_heads(self) -> int:
        return int(len(self.t))

    @property
    def speeds(self) -> np.ndarray:
        """Per-head speed array"""
        lookup = self.config.speeds
        return np.array([lookup[int(c)] for c in self.cls], dtype=float)

    def head(self, i: int) -> HeadPoint:
        return HeadPoint(t=float(self.t[i]), h=float(self.h[i]), cls=int(self.cls[i]))

    @property
    def heads(self) -> List[HeadPoint]:
        return [self.head(i) for i in range(self.n_heads)]

    @classmethod
    def from_heads(
        cls,
        heads: List[HeadPoint],
        config: ScenarioConfig,
        window: HeadWindow,
        replica: int = 0,
    ) -> "Realization":
        ordered = sorted(heads, key=lambda p: (p.t, p.cls))
        return cls(
            t=np.array([p.t for p in ordered], dtype=float),
            h=np.array([p.h for p in ordered], dtype=float),
            cls=np.array([p.cls for p in ordered], dtype=int),
            config=config,
            window=window,
            replica=replica,
        )


class RunManifest(BaseModel):
    """Record of one CLI invocation"""

    config: Optional[ScenarioConfig] = None
    subcommand: str
    replicas: int = 0
    outputs: Dict[str, str] = Field(default_factory=dict, description="file -> sha256")
    wall_clock_seconds: float = 0.0
    retries: int = 0
    overflows: int = 0
    notes: List[str] = Field(default_factory=list)
    version: str = "1.0.0"
