"""Geometry primitives and frame conventions.

World frame: x east, y north, heading measured counter-clockwise from +x.
Ego frame: y forward, x to the right. Every waypoint in the project uses
the ego frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    r = math.remainder(a, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


def normalize_angles(a: np.ndarray) -> np.ndarray:
    r = np.remainder(np.asarray(a, dtype=np.float64) + math.pi, TWO_PI) - math.pi
    return np.where(r <= -math.pi, r + TWO_PI, r)


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "heading", normalize_angle(float(self.heading)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)


class Waypoint(NamedTuple):
    """Ego-frame point: x lateral (right positive), y longitudinal (forward)."""

    x: float
    y: float


def _clamp(v: float, lo: float, hi: float) -> float:
    return lo if v < lo else hi if v > hi else v


@dataclass(frozen=True)
class VehicleState:
    pose: Pose2D
    speed: float = 0.0
    steer: float = 0.0
    throttle: float = 0.0
    brake: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "speed", max(0.0, float(self.speed)))
        object.__setattr__(self, "steer", _clamp(float(self.steer), -1.0, 1.0))
        object.__setattr__(self, "throttle", _clamp(float(self.throttle), 0.0, 1.0))
        object.__setattr__(self, "brake", _clamp(float(self.brake), 0.0, 1.0))


def world_to_ego(p: Pose2D | tuple[float, float], ego: Pose2D) -> Waypoint:
    px, py = (p.x, p.y) if isinstance(p, Pose2D) else p
    dx, dy = px - ego.x, py - ego.y
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    return Waypoint(dx * s - dy * c, dx * c + dy * s)


def ego_to_world(w: Waypoint | tuple[float, float], ego: Pose2D) -> tuple[float, float]:
    wx, wy = w
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    return (ego.x + wx * s + wy * c, ego.y - wx * c + wy * s)


def world_to_ego_array(points: np.ndarray, ego: Pose2D) -> np.ndarray:
    """Vectorised ``world_to_ego`` over an (..., 2) array."""
    pts = np.asarray(points, dtype=np.float64)
    dx = pts[..., 0] - ego.x
    dy = pts[..., 1] - ego.y
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    return np.stack([dx * s - dy * c, dx * c + dy * s], axis=-1)


def ego_to_world_array(points: np.ndarray, ego: Pose2D) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    wx, wy = pts[..., 0], pts[..., 1]
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    return np.stack([ego.x + wx * s + wy * c, ego.y - wx * c + wy * s], axis=-1)


def heading_delta(a: float, b: float) -> float:
    """Signed smallest rotation taking heading ``a`` to heading ``b``, in (-pi, pi]."""
    return normalize_angle(b - a)
