from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import List, Literal, Optional, Tuple
import math

from src.models.scenario_model import HeadPoint


class RadialBird(BaseModel):
    """Distance trajectory of one station: sqrt(v^2 (t - T)^2 + H^2)"""

    model_config = ConfigDict(frozen=True)

    head: HeadPoint
    v: float = Field(..., gt=0)

    def height(self, t: float) -> float:
        return math.hypot(self.v * (t - self.head.t), self.head.h)


class HalfEllipseRegion(BaseModel):
    """Open region {h >= 0, v^2 (t - s)^2 + h^2 < u^2}"""

    model_config = ConfigDict(frozen=True)

    s: float
    u: float = Field(..., gt=0)
    v: float = Field(default=1.0, gt=0)

    @property
    def area(self) -> float:
        return math.pi * self.u**2 / (2.0 * self.v)


class Intersection(BaseModel):
    model_config = ConfigDict(frozen=True)

    s: float
    h: float = Field(..., ge=0)
    kind: Literal["unique", "first", "second", "tangent"]


class HandoverType(BaseModel):
    """⟦q; tau_p, tau_n⟧: previous class, next class and head order"""

    model_config = ConfigDict(frozen=True)

    q: Literal[1, 2]
    tau_p: int = Field(..., ge=1)
    tau_n: int = Field(..., ge=1)

    @model_validator(mode="after")
    def pure_types_have_q1(self):
        if self.tau_p == self.tau_n and self.q != 1:
            raise ValueError("pure handover types have q = 1")
        return self

    @property
    def is_pure(self) -> bool:
        return self.tau_p == self.tau_n

    @property
    def label(self) -> str:
        return f"[[{self.q};{self.tau_p},{self.tau_n}]]"

    @property
    def old_notation(self) -> Tuple[int, int, int]:
        """(k; l, r): intersection index, left and right head classes.

        Classes with a smaller index are faster, so a slow to fast handover
        happens at the first intersection of the pair.
        """
        if self.q == 1:
            left, right = self.tau_p, self.tau_n
        else:
            left, right = self.tau_n, self.tau_p
        k = 2 if self.tau_n > self.tau_p else 1
        return k, left, right

    @property
    def old_label(self) -> str:
        k, left, right = self.old_notation
        return f"binom({k};{left},{right})"

    @classmethod
    def from_old(cls, k: int, left: int, right: int) -> "HandoverType":
        if left == right:
            return cls(q=1, tau_p=left, tau_n=right)
        # slow -> fast at k = 1, fast -> slow at k = 2
        fast, slow = min(left, right), max(left, right)
        tau_p, tau_n = (slow, fast) if k == 1 else (fast, slow)
        q = 1 if right == tau_n else 2
        return cls(q=q, tau_p=tau_p, tau_n=tau_n)


def two_speed_types() -> List[HandoverType]:
    """The six two-speed types in reporting order"""
    return [
        HandoverType(q=1, tau_p=1, tau_n=1),
        HandoverType(q=1, tau_p=2, tau_n=2),
        HandoverType(q=1, tau_p=1, tau_n=2),
        HandoverType(q=1, tau_p=2, tau_n=1),
        HandoverType(q=2, tau_p=1, tau_n=2),
        HandoverType(q=2, tau_p=2, tau_n=1),
    ]


def all_types(n_classes: int) -> List[HandoverType]:
    if n_classes == 2:
        return two_speed_types()
    types = [HandoverType(q=1, tau_p=i, tau_n=i) for i in range(1, n_classes + 1)]
    for i in range(1, n_classes + 1):
        for j in range(1, n_classes + 1):
            if i != j:
                types.append(HandoverType(q=1, tau_p=i, tau_n=j))
                types.append(HandoverType(q=2, tau_p=i, tau_n=j))
    return types


class EnvelopeSegment(BaseModel):
    model_config = ConfigDict(frozen=True)

    t_from: float
    t_to: float
    serving: HeadPoint


class HandoverEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    s: float
    h: float = Field(..., ge=0)
    prev_head: HeadPoint
    next_head: HeadPoint
    type: HandoverType
    boundary: bool = False
    replica: int = 0


class MarkovState(BaseModel):
    """(h_l, t_r, h_r): left head at (0, h_l), right head at (t_r, h_r)"""

    model_config = ConfigDict(frozen=True)

    h_l: float = Field(..., gt=0)
    t_r: float = Field(..., ge=0)
    h_r: float = Field(..., gt=0)
    type: Optional[HandoverType] = None

    def heads(self) -> Tuple[HeadPoint, HeadPoint]:
        """(previous, next) heads in the state's local frame"""
        tau = self.type or HandoverType(q=1, tau_p=1, tau_n=1)
        left_cls, right_cls = (
            (tau.tau_p, tau.tau_n) if tau.q == 1 else (tau.tau_n, tau.tau_p)
        )
        left = HeadPoint(t=0.0, h=self.h_l, cls=left_cls)
        right = HeadPoint(t=self.t_r, h=self.h_r, cls=right_cls)
        return (left, right) if tau.q == 1 else (right, left)
