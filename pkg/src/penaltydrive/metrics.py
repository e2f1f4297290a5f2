"""Route completion, infraction score and driving score."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# Per-occurrence multipliers: pedestrian, vehicle, static, red light, stop sign.
PENALTY_FACTORS = {"n_ped": 0.5, "n_veh": 0.60, "n_stat": 0.65, "n_red": 0.7, "n_stop": 0.8}

_KIND_TO_FIELD = {"CollisionPedestrian": "n_ped", "CollisionVehicle": "n_veh",
                  "CollisionStatic": "n_stat", "RedLight": "n_red", "StopSign": "n_stop"}


@dataclass(frozen=True)
class InfractionCounts:
    n_ped: int = 0
    n_veh: int = 0
    n_stat: int = 0
    n_red: int = 0
    n_stop: int = 0

    def __post_init__(self) -> None:
        for k, v in self.as_dict().items():
            if int(v) != v or v < 0:
                raise ValueError(f"{k} must be a non-negative integer")

    def as_dict(self) -> dict[str, int]:
        return {k: getattr(self, k) for k in PENALTY_FACTORS}

    def __add__(self, other: "InfractionCounts") -> "InfractionCounts":
        return InfractionCounts(**{k: getattr(self, k) + getattr(other, k) for k in PENALTY_FACTORS})

    @classmethod
    def from_events(cls, events: Iterable) -> "InfractionCounts":
        counts = dict.fromkeys(PENALTY_FACTORS, 0)
        for e in events:
            kind = e.kind.value if hasattr(e.kind, "value") else str(e.kind)
            counts[_KIND_TO_FIELD[kind]] += 1
        return cls(**counts)


@dataclass(frozen=True)
class RouteResult:
    completion: float
    counts: InfractionCounts = field(default_factory=InfractionCounts)
    name: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.completion <= 1.0:
            raise ValueError(f"completion {self.completion} outside [0, 1]")

    @property
    def infraction_score(self) -> float:
        return infraction_score(self.counts)


def infraction_score(counts: InfractionCounts) -> float:
    score = 1.0
    for key, factor in PENALTY_FACTORS.items():
        score *= factor ** getattr(counts, key)
    return score


def _require(results: Sequence[RouteResult]) -> None:
    if not results:
        raise ValueError("at least one route result is required")


def route_completion(results: Sequence[RouteResult]) -> float:
    """Mean completion, in percent."""
    _require(results)
    return 100.0 * math.fsum(r.completion for r in results) / len(results)


def driving_score(results: Sequence[RouteResult]) -> float:
    """Mean of completion times infraction score, in percent."""
    _require(results)
    return 100.0 * math.fsum(r.completion * infraction_score(r.counts) for r in results) / len(results)


def mean_infraction_score(results: Sequence[RouteResult]) -> float:
    """Mean of the per-route infraction scores (reported in [0, 1])."""
    _require(results)
    return math.fsum(infraction_score(r.counts) for r in results) / len(results)


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
