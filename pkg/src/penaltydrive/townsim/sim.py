"""Kinematic bicycle world stepping, infraction detection and rule context."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from ..core import Pose2D, VehicleState, heading_delta, world_to_ego
from .world import Color, Route, TownMap, light_color_at


@dataclass(frozen=True)
class SimConfig:
    a_max: float = 3.0
    b_max: float = 8.0
    v_max: float = 12.0
    wheelbase: float = 2.5
    drag: float = 0.1
    max_steer_angle: float = 0.7
    substep: float = 0.1
    vehicle_length: float = 4.5
    vehicle_width: float = 2.0
    eps_v: float = 0.5
    stop_lookahead: float = 20.0
    light_view_range: float = 30.0


DEFAULT_SIM = SimConfig()


class InfractionKind(str, Enum):
    COLLISION_PEDESTRIAN = "CollisionPedestrian"
    COLLISION_VEHICLE = "CollisionVehicle"
    COLLISION_STATIC = "CollisionStatic"
    RED_LIGHT = "RedLight"
    STOP_SIGN = "StopSign"


@dataclass(frozen=True)
class InfractionEvent:
    kind: InfractionKind
    time: float
    route_index: int = 0
    object_id: int = -1


@dataclass(frozen=True)
class NpcScript:
    """Vehicle that follows ``path`` at constant speed starting at ``start_time``."""

    path: tuple[tuple[float, float], ...]
    speed: float
    start_time: float = 0.0

    def state_at(self, t: float) -> VehicleState:
        route = _npc_route(self.path)
        s = self.speed * max(0.0, t - self.start_time)
        moving = 0.0 < s < route.length
        p = route.point_at(s)
        return VehicleState(Pose2D(float(p[0]), float(p[1]), route.heading_at(s)),
                            speed=self.speed if moving else 0.0)


_NPC_ROUTES: dict[tuple, Route] = {}


def _npc_route(path) -> Route:
    r = _NPC_ROUTES.get(path)
    if r is None:
        r = _NPC_ROUTES[path] = Route(goals=path, path=np.asarray(path, dtype=np.float64), name="npc")
    return r


@dataclass(frozen=True)
class SignEncounter:
    sign_id: int
    min_speed: float
    stopped_at: float | None = None


@dataclass(frozen=True)
class SimState:
    time: float
    ego: VehicleState
    map: TownMap
    npcs: tuple[VehicleState, ...] = ()
    rng_seed: int = 0
    route: Route | None = None
    npc_scripts: tuple[NpcScript, ...] = ()
    progress_s: float = 0.0
    crossed_lines: frozenset = frozenset()
    passed_signs: frozenset = frozenset()
    sign_encounter: SignEncounter | None = None
    collided: frozenset = frozenset()
    config: SimConfig = field(default=DEFAULT_SIM, repr=False)


def initial_state(town: TownMap, route: Route, npc_scripts=(), speed: float = 0.0,
                  rng_seed: int = 0, config: SimConfig = DEFAULT_SIM) -> SimState:
    p = route.point_at(0.0)
    ego = VehicleState(Pose2D(float(p[0]), float(p[1]), route.heading_at(0.0)), speed=speed)
    npcs = tuple(s.state_at(0.0) for s in npc_scripts)
    return SimState(time=0.0, ego=ego, map=town, npcs=npcs, rng_seed=rng_seed, route=route,
                    npc_scripts=tuple(npc_scripts), config=config)


# ------------------------------------------------------------------ geometry


def box_corners(x: float, y: float, heading: float, length: float, width: float) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    f = np.array([c, s]) * length / 2
    r = np.array([s, -c]) * width / 2
    ctr = np.array([x, y])
    return np.array([ctr + f + r, ctr + f - r, ctr - f - r, ctr - f + r])


def boxes_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex quadrilaterals."""
    for poly in (a, b):
        for i in range(4):
            e = poly[(i + 1) % 4] - poly[i]
            axis = np.array([-e[1], e[0]])
            pa, pb = a @ axis, b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


# ---------------------------------------------------------------------- step


def _check_controls(steer: float, throttle: float, brake: float) -> tuple[float, float, float]:
    vals = (float(steer), float(throttle), float(brake))
    if not all(math.isfinite(v) for v in vals):
        raise ValueError(f"non-finite controls {vals}")
    return (min(1.0, max(-1.0, vals[0])), min(1.0, max(0.0, vals[1])), min(1.0, max(0.0, vals[2])))


def step(state: SimState, controls: tuple[float, float, float], dt: float = 0.5,
         route_index: int = 0) -> tuple[SimState, list[InfractionEvent]]:
    """Advance the world by ``dt`` seconds; returns the new state and emitted events.

    Positive steer turns right (clockwise), matching the ego frame's x axis.
    """
    if not (dt > 0 and math.isfinite(dt)):
        raise ValueError(f"dt must be positive, got {dt}")
    steer, throttle, brake = _check_controls(*controls)
    cfg = state.config
    n_sub = max(1, int(math.ceil(dt / cfg.substep - 1e-9)))
    h = dt / n_sub
    x, y, th = state.ego.pose.x, state.ego.pose.y, state.ego.pose.heading
    v = state.ego.speed
    t = state.time
    crossed = set(state.crossed_lines)
    passed = set(state.passed_signs)
    collided = set(state.collided)
    enc = state.sign_encounter
    events: list[InfractionEvent] = []
    yaw_gain = math.tan(steer * cfg.max_steer_angle) / cfg.wheelbase
    for _ in range(n_sub):
        v = min(max(v + (cfg.a_max * throttle - cfg.b_max * brake - cfg.drag * v) * h, 0.0), cfg.v_max)
        th_new = th - v * yaw_gain * h
        x_new = x + v * math.cos(0.5 * (th + th_new)) * h
        y_new = y + v * math.sin(0.5 * (th + th_new)) * h
        t_new = t + h
        # Red-light crossings.
        for line in state.map.stop_lines:
            c, s = math.cos(line.heading), math.sin(line.heading)
            u0 = (x - line.position[0]) * c + (y - line.position[1]) * s
            u1 = (x_new - line.position[0]) * c + (y_new - line.position[1]) * s
            if not (u0 < 0.0 <= u1):
                continue
            a = -u0 / (u1 - u0)
            cx, cy = x + a * (x_new - x), y + a * (y_new - y)
            lat = (cx - line.position[0]) * s - (cy - line.position[1]) * c
            if abs(lat) > line.half_width + 0.5 or math.cos(th_new - line.heading) < 0.5:
                continue
            if line.id in crossed:
                continue
            crossed.add(line.id)
            if line.light_id is not None:
                color = light_color_at(state.map.light(line.light_id), t + a * h)
                if color is Color.RED:
                    events.append(InfractionEvent(InfractionKind.RED_LIGHT, t_new, route_index, line.id))
        # Stop-sign zones.
        inside = None
        for sign in state.map.signs:
            if sign.id in passed:
                continue
            if math.hypot(x_new - sign.position[0], y_new - sign.position[1]) <= sign.influence_radius \
                    and math.cos(th_new - sign.heading) > 0.5:
                inside = sign
                break
        if enc is not None and (inside is None or inside.id != enc.sign_id):
            if enc.min_speed > cfg.eps_v:
                events.append(InfractionEvent(InfractionKind.STOP_SIGN, t_new, route_index, enc.sign_id))
            passed.add(enc.sign_id)
            enc = None
        if inside is not None:
            if enc is None:
                enc = SignEncounter(inside.id, v)
            stopped = enc.stopped_at
            if stopped is None and v <= cfg.eps_v:
                stopped = t_new
            enc = SignEncounter(inside.id, min(enc.min_speed, v), stopped)
        x, y, th, t = x_new, y_new, th_new, t_new
    t = state.time + dt
    ego = VehicleState(Pose2D(x, y, th), speed=v, steer=steer, throttle=throttle, brake=brake)
    npcs = tuple(sc.state_at(t) for sc in state.npc_scripts) if state.npc_scripts else state.npcs
    # Collisions, one event per object per episode.
    ego_box = box_corners(x, y, ego.pose.heading, cfg.vehicle_length, cfg.vehicle_width)
    for i, npc in enumerate(npcs):
        key = ("veh", i)
        if key in collided:
            continue
        b = box_corners(npc.pose.x, npc.pose.y, npc.pose.heading, cfg.vehicle_length, cfg.vehicle_width)
        if boxes_overlap(ego_box, b):
            collided.add(key)
            events.append(InfractionEvent(InfractionKind.COLLISION_VEHICLE, t, route_index, i))
    for ob in state.map.obstacles:
        key = ("static", ob.id)
        if key in collided:
            continue
        if boxes_overlap(ego_box, box_corners(ob.x, ob.y, ob.heading, ob.length, ob.width)):
            collided.add(key)
            events.append(InfractionEvent(InfractionKind.COLLISION_STATIC, t, route_index, ob.id))
    new = replace(state, time=t, ego=ego, npcs=npcs, crossed_lines=frozenset(crossed),
                  passed_signs=frozenset(passed), sign_encounter=enc, collided=frozenset(collided))
    if state.route is not None:
        new = replace(new, progress_s=_advance_progress(new, state.route))
    return new, events


def _advance_progress(state: SimState, route: Route) -> float:
    s, d = route.project((state.ego.pose.x, state.ego.pose.y),
                         state.progress_s - 5.0, state.progress_s + 25.0)
    if d > 2.0 * state.map.lane_width:
        return state.progress_s
    return max(state.progress_s, s)


def route_progress(state: SimState, route: Route | None = None) -> float:
    """Completed fraction of the route in [0, 1], never decreasing within an episode."""
    route = route if route is not None else state.route
    if route is None:
        raise ValueError("no route given")
    if route is state.route:
        s = state.progress_s
    else:
        s = route.project((state.ego.pose.x, state.ego.pose.y))[0]
    return min(1.0, max(0.0, s / route.length))


# -------------------------------------------------------------- rule context


@dataclass(frozen=True)
class RuleContext:
    is_red: bool
    y_stop: float
    is_stop_sign: bool
    delta_heading: float
    light_state: str  # "red" | "yellow" | "green" | "none"
    stop_sign_ahead: bool
    goal: tuple[float, float]


def route_stop_lines(state: SimState, route: Route) -> list[tuple[float, int]]:
    """(arc position, line id) of every stop line that lies on the route, sorted."""
    key = id(route), id(state.map)
    cached = _LINE_CACHE.get(key)
    if cached is not None and cached[0] is route and cached[1] is state.map:
        return cached[2]
    out = []
    for line in state.map.stop_lines:
        s, d = route.project(line.position)
        if d <= line.half_width and math.cos(route.heading_at(s) - line.heading) > 0.7:
            out.append((s, line.id))
    out.sort()
    _LINE_CACHE[key] = (route, state.map, out)
    return out


_LINE_CACHE: dict = {}


def rule_context(state: SimState, route: Route | None = None, lookahead: float | None = None,
                 goal_distance: float = 20.0, dt: float = 0.5) -> RuleContext:
    route = route if route is not None else state.route
    cfg = state.config
    L = cfg.stop_lookahead if lookahead is None else lookahead
    ego = state.ego
    s_ego = state.progress_s if route is state.route else route.project((ego.pose.x, ego.pose.y))[0]
    is_red, y_stop, light_state, sign_ahead = False, math.inf, "none", False
    for s_line, line_id in route_stop_lines(state, route):
        line = state.map.stop_lines[line_id]
        fwd = world_to_ego(line.position, ego.pose).y
        if s_line - s_ego <= 0 or fwd <= 0 or line_id in state.crossed_lines:
            continue
        if s_line - s_ego > max(L, cfg.light_view_range):
            break
        if line.light_id is not None:
            color = light_color_at(state.map.light(line.light_id), state.time)
            light_state = color.value
            if color is Color.RED and s_line - s_ego <= L:
                is_red, y_stop = True, fwd
        elif s_line - s_ego <= L and line.sign_id not in state.passed_signs:
            sign_ahead = True
        break
    # Inside a stop-sign zone that has not yet been satisfied.
    is_stop_sign = False
    for sign in state.map.signs:
        if sign.id in state.passed_signs:
            continue
        if math.hypot(ego.pose.x - sign.position[0], ego.pose.y - sign.position[1]) <= sign.influence_radius \
                and math.cos(ego.pose.heading - sign.heading) > 0.5:
            enc = state.sign_encounter
            satisfied = enc is not None and enc.sign_id == sign.id and enc.stopped_at is not None
            is_stop_sign = not satisfied
            break
    ahead = max(ego.speed, 2.0) * dt
    dh = heading_delta(route.heading_at(s_ego), route.heading_at(s_ego + ahead))
    g = route.point_at(s_ego + goal_distance)
    goal = tuple(world_to_ego((float(g[0]), float(g[1])), ego.pose))
    return RuleContext(is_red, y_stop, is_stop_sign, dh, light_state, sign_ahead, goal)
