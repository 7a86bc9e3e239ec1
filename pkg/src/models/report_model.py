from pydantic import BaseModel, ConfigDict, Field
from typing import Any, Dict, List, Optional
import numpy as np

from src.models.handover_model import EnvelopeSegment, HandoverEvent, HandoverType
from src.models.scenario_model import Realization


class TestResult(BaseModel):
    """Outcome of one statistical test"""

    __test__ = False  # not a pytest class

    name: str
    statistic: float
    p_value: float = Field(..., ge=0.0, le=1.0)
    n: int = Field(..., ge=0)


class QuadratureResult(BaseModel):
    """Numerical integral with its standard error"""

    value: float
    se: float = Field(default=0.0, ge=0.0)
    n: int = Field(default=0, ge=0)

    @property
    def rel_se(self) -> float:
        return self.se / abs(self.value) if self.value else float("inf")


class Estimate(BaseModel):
    """Point estimate with a confidence interval and its analytic counterpart"""

    value: float
    se: float = 0.0
    ci_low: float
    ci_high: float
    analytic: Optional[float] = None
    n: Optional[int] = None

    @property
    def covers_analytic(self) -> bool:
        return self.analytic is not None and self.ci_low <= self.analytic <= self.ci_high


class EstimateReport(BaseModel):
    """Estimates and goodness-of-fit results keyed by the quantity they check"""

    estimates: Dict[str, Estimate] = Field(default_factory=dict)
    tests: Dict[str, TestResult] = Field(default_factory=dict)
    notes: List[str] = Field(default_factory=list)

    def merge(self, other: "EstimateReport") -> "EstimateReport":
        return EstimateReport(
            estimates={**self.estimates, **other.estimates},
            tests={**self.tests, **other.tests},
            notes=self.notes + other.notes,
        )


class PalmSampleSet(BaseModel):
    """Samples pooled from the interior events of all replicas"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    handover_distances: np.ndarray
    types: List[HandoverType]
    dwell_times: np.ndarray
    dwell_types: List[HandoverType] = Field(default_factory=list)
    visible_heights: np.ndarray
    visible_classes: np.ndarray
    typical_distances: np.ndarray
    type_order: List[HandoverType]
    transition_counts: np.ndarray
    replica_event_counts: List[int]
    replica_visible_counts: List[int]
    replica_interior_times: List[float]
    # distance minus handover distance of every other head, flattened over events
    interference_offsets: np.ndarray = Field(default_factory=lambda: np.empty(0))
    interference_index: np.ndarray = Field(default_factory=lambda: np.empty(0, dtype=int))
    # h_max minus handover distance, per event; offsets beyond it are truncated
    interference_caps: np.ndarray = Field(default_factory=lambda: np.empty(0))
    # all distances seen at the typical times, flattened, and the cap per time
    typical_all: np.ndarray = Field(default_factory=lambda: np.empty(0))
    typical_caps: np.ndarray = Field(default_factory=lambda: np.empty(0))

    @property
    def total_time(self) -> float:
        return float(sum(self.replica_interior_times))

    @property
    def n_events(self) -> int:
        return int(len(self.handover_distances))

    def distances_of(self, handover_type: HandoverType) -> np.ndarray:
        mask = np.array([t == handover_type for t in self.types], dtype=bool)
        return self.handover_distances[mask] if mask.size else self.handover_distances[:0]

    def summary(self) -> Dict[str, Any]:
        return {
            "n_events": self.n_events,
            "n_dwell": int(len(self.dwell_times)),
            "n_visible": int(len(self.visible_heights)),
            "n_replicas": len(self.replica_event_counts),
            "interior_time": self.total_time,
        }


class ReplicaOutput(BaseModel):
    """Realization of one replica with its envelope and handover events"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    replica: int
    realization: Realization
    segments: List[EnvelopeSegment]
    events: List[HandoverEvent]
    retries: int = 0

    @property
    def interior_events(self) -> List[HandoverEvent]:
        return [e for e in self.events if not e.boundary]
