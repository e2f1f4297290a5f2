"""Static town description: roads, junctions, lights, stop signs, routes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..core import normalize_angle


class Color(str, Enum):
    RED = "red"
    YELLOW = "yellow"
    GREEN = "green"


@dataclass(frozen=True)
class TrafficLight:
    id: int
    phase_schedule: tuple[tuple[Color, float], ...]
    phase_offset: float = 0.0

    def __post_init__(self) -> None:
        if not self.phase_schedule:
            raise ValueError("empty phase schedule")
        sched = tuple((Color(c), float(d)) for c, d in self.phase_schedule)
        if any(d <= 0 for _, d in sched):
            raise ValueError(f"light {self.id}: phase durations must be positive")
        object.__setattr__(self, "phase_schedule", sched)

    @property
    def cycle(self) -> float:
        return sum(d for _, d in self.phase_schedule)


def light_color_at(light: TrafficLight, t: float) -> Color:
    """Phase lookup; each phase owns the half-open interval [start, end)."""
    if t < 0:
        raise ValueError("time must be non-negative")
    u = math.fmod(t + light.phase_offset, light.cycle)
    if u < 0:
        u += light.cycle
    start = 0.0
    for color, dur in light.phase_schedule:
        if u < start + dur:
            return color
        start += dur
    return light.phase_schedule[-1][0]


@dataclass(frozen=True)
class StopSign:
    id: int
    position: tuple[float, float]
    heading: float
    influence_radius: float = 4.0


@dataclass(frozen=True)
class StopLine:
    """Line across one approach lane; ``heading`` is the governed travel direction."""

    id: int
    position: tuple[float, float]
    heading: float
    half_width: float
    light_id: int | None = None
    sign_id: int | None = None

    def __post_init__(self) -> None:
        if (self.light_id is None) == (self.sign_id is None):
            raise ValueError(f"stop line {self.id} must reference exactly one light or sign")


@dataclass(frozen=True)
class Lane:
    """Road centreline polyline; ``width`` spans both travel directions."""

    points: tuple[tuple[float, float], ...]
    width: float


@dataclass(frozen=True)
class Junction:
    center: tuple[float, float]
    control: str  # "light", "stop" or "none"
    light_offset: float = 0.0


@dataclass(frozen=True)
class Obstacle:
    """Static box (parked car, barrier)."""

    id: int
    x: float
    y: float
    heading: float
    length: float = 4.5
    width: float = 2.0


@dataclass(frozen=True)
class TownMap:
    lanes: tuple[Lane, ...] = ()
    intersections: tuple[Junction, ...] = ()
    stop_lines: tuple[StopLine, ...] = ()
    lights: tuple[TrafficLight, ...] = ()
    signs: tuple[StopSign, ...] = ()
    obstacles: tuple[Obstacle, ...] = ()
    lane_width: float = 4.0

    def __post_init__(self) -> None:
        light_ids = {l.id for l in self.lights}
        sign_ids = {s.id for s in self.signs}
        for line in self.stop_lines:
            if line.light_id is not None and line.light_id not in light_ids:
                raise ValueError(f"stop line {line.id} references unknown light {line.light_id}")
            if line.sign_id is not None and line.sign_id not in sign_ids:
                raise ValueError(f"stop line {line.id} references unknown sign {line.sign_id}")
        object.__setattr__(self, "_light_by_id", {l.id: l for l in self.lights})
        object.__setattr__(self, "_sign_by_id", {s.id: s for s in self.signs})
        segs = []
        for lane in self.lanes:
            pts = np.asarray(lane.points, dtype=np.float64)
            for a, b in zip(pts[:-1], pts[1:]):
                segs.append((a[0], a[1], b[0], b[1], lane.width / 2.0))
        object.__setattr__(self, "_segments", np.asarray(segs, dtype=np.float64).reshape(-1, 5))

    def light(self, light_id: int) -> TrafficLight:
        return self._light_by_id[light_id]

    def sign(self, sign_id: int) -> StopSign:
        return self._sign_by_id[sign_id]

    def drivable(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of points (..., 2) lying on any road surface."""
        pts = np.asarray(points, dtype=np.float64)
        flat = pts.reshape(-1, 2)
        out = np.zeros(flat.shape[0], dtype=bool)
        for ax, ay, bx, by, hw in self._segments:
            dx, dy = bx - ax, by - ay
            den = dx * dx + dy * dy
            px, py = flat[:, 0] - ax, flat[:, 1] - ay
            t = np.clip((px * dx + py * dy) / den, 0.0, 1.0) if den > 0 else np.zeros(len(flat))
            ex, ey = px - t * dx, py - t * dy
            out |= ex * ex + ey * ey <= hw * hw
        return out.reshape(pts.shape[:-1])


def _unit(h: float) -> np.ndarray:
    return np.array([math.cos(h), math.sin(h)])


@dataclass(frozen=True)
class Route:
    """Dense lane-level path plus the sparse goal points it was built from."""

    goals: tuple[tuple[float, float], ...]
    path: np.ndarray = field(repr=False)
    name: str = "route"

    def __post_init__(self) -> None:
        path = np.asarray(self.path, dtype=np.float64)
        if path.ndim != 2 or path.shape[0] < 2:
            raise ValueError("route path needs at least two points")
        seg = np.diff(path, axis=0)
        seglen = np.hypot(seg[:, 0], seg[:, 1])
        keep = np.concatenate([[True], seglen > 1e-9])
        path = path[keep]
        seg = np.diff(path, axis=0)
        seglen = np.hypot(seg[:, 0], seg[:, 1])
        path.flags.writeable = False
        object.__setattr__(self, "path", path)
        object.__setattr__(self, "_seg", seg)
        object.__setattr__(self, "_seglen", seglen)
        object.__setattr__(self, "_s", np.concatenate([[0.0], np.cumsum(seglen)]))
        object.__setattr__(self, "_heading", np.arctan2(seg[:, 1], seg[:, 0]))

    def __hash__(self) -> int:
        return hash((self.name, self.goals, self.path.tobytes()))

    def __eq__(self, other) -> bool:
        return (isinstance(other, Route) and self.name == other.name and self.goals == other.goals
                and np.array_equal(self.path, other.path))

    @property
    def length(self) -> float:
        return float(self._s[-1])

    def point_at(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.length)
        i = int(np.clip(np.searchsorted(self._s, s, side="right") - 1, 0, len(self._seg) - 1))
        t = (s - self._s[i]) / self._seglen[i]
        return self.path[i] + t * self._seg[i]

    def heading_at(self, s: float) -> float:
        s = min(max(s, 0.0), self.length)
        i = int(np.clip(np.searchsorted(self._s, s, side="right") - 1, 0, len(self._seg) - 1))
        return float(self._heading[i])

    def project(self, p, s_lo: float = -math.inf, s_hi: float = math.inf) -> tuple[float, float]:
        """Arc position of the closest path point within [s_lo, s_hi]; returns (s, distance)."""
        p = np.asarray(p, dtype=np.float64)
        a = self.path[:-1]
        rel = p - a
        t = np.clip((rel * self._seg).sum(axis=1) / (self._seglen ** 2), 0.0, 1.0)
        s = self._s[:-1] + t * self._seglen
        closest = a + t[:, None] * self._seg
        d = np.hypot(*(closest - p).T)
        ok = (self._s[1:] >= s_lo) & (self._s[:-1] <= s_hi)
        if not ok.any():
            ok[:] = True
        d = np.where(ok, d, np.inf)
        i = int(np.argmin(d))
        return float(np.clip(s[i], max(s_lo, 0.0), min(s_hi, self.length))), float(d[i])

    def max_heading_change(self, s0: float, s1: float, step: float = 1.0) -> float:
        h0 = self.heading_at(s0)
        best = 0.0
        s = s0
        while s <= s1:
            best = max(best, abs(normalize_angle(self.heading_at(s) - h0)))
            s += step
        return best


def build_route(goals, lane_width: float, name: str = "route",
                r_right: float = 5.0, r_left: float = 7.0, spacing: float = 0.5) -> Route:
    """Lane-level path through axis-aligned goal points (right-hand traffic).

    Consecutive goals must differ along one axis; turns at interior goals are
    filleted with circular arcs tangent to both lane lines.
    """
    g = np.asarray(goals, dtype=np.float64)
    if len(g) < 2:
        raise ValueError("route needs at least two goal points")
    off = lane_width / 2.0
    dirs = []
    for a, b in zip(g[:-1], g[1:]):
        d = b - a
        n = np.hypot(*d)
        if n == 0:
            raise ValueError("repeated goal point")
        dirs.append(d / n)
    right = [np.array([d[1], -d[0]]) for d in dirs]
    pts = [g[0] + right[0] * off]
    for k in range(1, len(g) - 1):
        din, dout = dirs[k - 1], dirs[k]
        cross = din[0] * dout[1] - din[1] * dout[0]
        if abs(cross) < 1e-9:
            if np.dot(din, dout) < 0:
                raise ValueError("u-turns are not supported")
            continue
        corner = g[k] + right[k - 1] * off + right[k] * off
        r = r_right if cross < 0 else r_left
        t1 = corner - din * r
        t2 = corner + dout * r
        side = right[k - 1] if cross < 0 else -right[k - 1]
        c = t1 + side * r
        a1 = math.atan2(*(t1 - c)[::-1])
        a2 = math.atan2(*(t2 - c)[::-1])
        sweep = normalize_angle(a2 - a1)
        n = max(4, int(abs(sweep) * r / spacing))
        pts.append(t1)
        for i in range(1, n):
            a = a1 + sweep * i / n
            pts.append(c + r * np.array([math.cos(a), math.sin(a)]))
        pts.append(t2)
    pts.append(g[-1] + right[-1] * off)
    dense = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, int(math.ceil(np.hypot(*(b - a)) / spacing)))
        for i in range(1, n + 1):
            dense.append(a + (b - a) * i / n)
    return Route(goals=tuple(map(tuple, g.tolist())), path=np.asarray(dense), name=name)


@dataclass(frozen=True)
class GridTown:
    """Parameters from which ``make_town`` derives a TownMap."""

    roads: tuple[tuple[float, float, float, float], ...]
    junctions: tuple[Junction, ...]
    lane_width: float = 4.0
    light_schedule: tuple[tuple[Color, float], ...] = ((Color.GREEN, 8.0), (Color.YELLOW, 2.0), (Color.RED, 10.0))
    stop_distance: float = 6.0
    sign_radius: float = 4.0
    obstacles: tuple[Obstacle, ...] = ()


def make_town(spec: GridTown) -> TownMap:
    lanes = tuple(Lane(((x0, y0), (x1, y1)), 2 * spec.lane_width) for x0, y0, x1, y1 in spec.roads)
    probe = TownMap(lanes=lanes, lane_width=spec.lane_width)
    lights, signs, lines = [], [], []
    cycle = sum(d for _, d in spec.light_schedule)
    for j in spec.junctions:
        if j.control == "none":
            continue
        if j.control not in ("light", "stop"):
            raise ValueError(f"unknown junction control {j.control!r}")
        jc = np.asarray(j.center, dtype=np.float64)
        for heading in (math.pi / 2, -math.pi / 2, 0.0, math.pi):
            d = _unit(heading)
            right = np.array([d[1], -d[0]])
            upstream = jc - d * (spec.stop_distance + 2.0) + right * spec.lane_width / 2
            if not probe.drivable(upstream[None])[0]:
                continue
            pos = jc - d * spec.stop_distance + right * spec.lane_width / 2
            line_id = len(lines)
            if j.control == "light":
                # Travel along y and along x run opposite halves of the cycle.
                along_x = abs(math.cos(heading)) > 0.5
                light = TrafficLight(len(lights), spec.light_schedule,
                                     j.light_offset + (cycle / 2 if along_x else 0.0))
                lights.append(light)
                lines.append(StopLine(line_id, tuple(pos), heading, spec.lane_width / 2, light_id=light.id))
            else:
                sign = StopSign(len(signs), tuple(pos), heading, spec.sign_radius)
                signs.append(sign)
                lines.append(StopLine(line_id, tuple(pos), heading, spec.lane_width / 2, sign_id=sign.id))
    return TownMap(lanes=lanes, intersections=spec.junctions, stop_lines=tuple(lines),
                   lights=tuple(lights), signs=tuple(signs), obstacles=spec.obstacles,
                   lane_width=spec.lane_width)
