"""Scripted rule-following driver and the episode collector."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import world_to_ego, world_to_ego_array
from .dataset import Frame
from .sensors import (DEFAULT_SENSORS, SensorConfig, measurement_vec, render_camera, render_front_seg_gt,
                      render_lidar, render_topdown_seg_gt)
from .townsim.scenario import ScenarioConfig
from .townsim.sim import SimState, route_stop_lines, rule_context, step
from .townsim.world import Color, Route, light_color_at

LIGHT_CLASSES = ("red", "yellow", "green", "none")
HORIZON = 4


@dataclass(frozen=True)
class ExpertConfig:
    cruise_speed: float = 6.0
    turn_speed: float = 3.0
    approach_slowdown: float = 2.5   # comfortable deceleration, m/s^2
    stop_margin: float = 2.0         # stop this far before a red line
    sign_stop_offset: float = 1.0    # stop this far before a stop-sign line
    stop_wait: float = 0.0
    lookahead: float = 5.0
    follow_gap: float = 6.0
    obey_red_lights: bool = True
    obey_stop_signs: bool = True
    # A sloppy expert brakes for stop signs like a careful one but never goes
    # below this speed (a rolling stop). Zero means a full stop.
    rolling_stop_speed: float = 0.0

    def __post_init__(self) -> None:
        if self.cruise_speed > 12.0:
            raise ValueError("cruise_speed exceeds v_max")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


DEFAULT_EXPERT = ExpertConfig()


def _stopping_speed(distance: float, decel: float) -> float:
    return math.sqrt(2.0 * decel * max(distance, 0.0))


def _target_speed(state: SimState, route: Route, cfg: ExpertConfig) -> float:
    ego = state.ego
    s_ego = state.progress_s
    target = cfg.cruise_speed
    if route.max_heading_change(s_ego, s_ego + 12.0) > 0.3:
        target = min(target, cfg.turn_speed)
    for s_line, line_id in route_stop_lines(state, route):
        ahead = s_line - s_ego
        if ahead <= 0 or line_id in state.crossed_lines:
            continue
        if ahead > 40.0:
            break
        line = state.map.stop_lines[line_id]
        fwd = world_to_ego(line.position, ego.pose).y
        if line.light_id is not None:
            color = light_color_at(state.map.light(line.light_id), state.time)
            must_stop = color is Color.RED
            if color is Color.YELLOW:
                # Commit through the yellow if it cannot stop comfortably.
                must_stop = fwd - cfg.stop_margin > ego.speed ** 2 / (2 * cfg.approach_slowdown) + 0.5
            if must_stop and cfg.obey_red_lights:
                target = min(target, _stopping_speed(fwd - cfg.stop_margin, cfg.approach_slowdown))
        elif cfg.obey_stop_signs and line.sign_id not in state.passed_signs:
            enc = state.sign_encounter
            done = enc is not None and enc.sign_id == line.sign_id and enc.stopped_at is not None \
                and state.time - enc.stopped_at >= cfg.stop_wait
            if not done:
                stop = _stopping_speed(fwd - cfg.sign_stop_offset, cfg.approach_slowdown)
                target = min(target, max(stop, cfg.rolling_stop_speed))
        break
    # Keep a gap to anything sitting on the path ahead.
    boxes = [(n.pose.x, n.pose.y) for n in state.npcs] + [(o.x, o.y) for o in state.map.obstacles]
    if boxes:
        ahead_pts = np.array([route.point_at(s_ego + d) for d in np.arange(2.0, 30.0, 1.0)])
        for bx, by in boxes:
            d = np.hypot(ahead_pts[:, 0] - bx, ahead_pts[:, 1] - by)
            hit = np.nonzero(d < 2.5)[0]
            if hit.size:
                gap = 2.0 + hit[0] - state.config.vehicle_length - cfg.follow_gap / 2
                target = min(target, _stopping_speed(gap, cfg.approach_slowdown))
    return target


def expert_action(state: SimState, route: Route | None = None,
                  cfg: ExpertConfig = DEFAULT_EXPERT) -> tuple[float, float, float]:
    """(steer, throttle, brake) from pure pursuit plus rule-aware speed targeting."""
    route = route if route is not None else state.route
    ego = state.ego
    sim = state.config
    ld = max(cfg.lookahead, 0.8 * ego.speed + 2.0)
    aim = route.point_at(state.progress_s + ld)
    w = world_to_ego((float(aim[0]), float(aim[1])), ego.pose)
    alpha = math.atan2(w.x, max(w.y, 1e-3))
    delta = math.atan2(2.0 * sim.wheelbase * math.sin(alpha), math.hypot(w.x, w.y))
    steer = float(np.clip(delta / sim.max_steer_angle, -1.0, 1.0))
    target = _target_speed(state, route, cfg)
    err = target - ego.speed
    if target < 0.05 and ego.speed < 0.3:
        return steer, 0.0, 1.0
    if err >= -0.2:
        # Feed-forward drag compensation plus proportional term.
        throttle = float(np.clip((sim.drag * target + 1.2 * err) / sim.a_max, 0.0, 1.0))
        return steer, throttle, 0.0
    brake = float(np.clip(-err / (sim.b_max * 0.5), 0.0, 1.0))
    return steer, 0.0, brake


def observe(state: SimState, sensors: SensorConfig = DEFAULT_SENSORS, dt: float = 0.5) -> dict:
    """Sensor views, measurements and rule facts for the current state (no future labels)."""
    ctx = rule_context(state, dt=dt)
    light = np.zeros(4)
    light[LIGHT_CLASSES.index(ctx.light_state)] = 1.0
    return dict(
        camera=render_camera(state, sensors), lidar=render_lidar(state, sensors),
        front_seg=render_front_seg_gt(state, sensors), td_seg=render_topdown_seg_gt(state, sensors),
        meas=measurement_vec(state.ego), light_state=light,
        stop_sign_flag=float(ctx.is_stop_sign),
        is_red=float(ctx.is_red), y_stop=float(ctx.y_stop), is_stop_sign=float(ctx.is_stop_sign),
        delta_heading=float(ctx.delta_heading), goal=np.asarray(ctx.goal, dtype=np.float64))


@dataclass
class Episode:
    scenario: str
    frames: list[Frame]
    rejected: bool
    events: list
    progress: float
    expert_digest: str
    n_steps: int


def future_waypoints(states: list[SimState], i: int) -> np.ndarray:
    pts = np.array([[s.ego.pose.x, s.ego.pose.y] for s in states[i + 1:i + 1 + HORIZON]])
    return world_to_ego_array(pts, states[i].ego.pose)


def collect_episode(scenario: ScenarioConfig, cfg: ExpertConfig = DEFAULT_EXPERT,
                    sensors: SensorConfig = DEFAULT_SENSORS, seed: int = 0) -> Episode:
    """Run the expert closed loop and label each frame with its next four ego positions.

    The episode ends when the route is complete or the time limit is hit; the
    last four states have no full future and yield no frame. A collision
    aborts the episode and marks it rejected.
    """
    state = scenario.initial_state(seed)
    states = [state]
    events = []
    rejected = False
    while state.time - scenario.start_time < scenario.time_limit - 1e-9:
        if state.progress_s >= scenario.route.length - 0.5:
            break
        action = expert_action(state, scenario.route, cfg)
        state, ev = step(state, action, scenario.dt, scenario.index)
        states.append(state)
        events.extend(ev)
        if any(e.kind.value.startswith("Collision") for e in ev):
            rejected = True
            break
    frames = []
    for i in range(max(0, len(states) - HORIZON)):
        obs = observe(states[i], sensors, scenario.dt)
        frames.append(Frame(
            camera=obs["camera"], lidar=obs["lidar"], front_seg=obs["front_seg"], td_seg=obs["td_seg"],
            meas=obs["meas"], light_state=obs["light_state"], stop_sign_flag=obs["is_stop_sign"],
            is_red=obs["is_red"], y_stop=obs["y_stop"], delta_heading=obs["delta_heading"],
            goal=obs["goal"], waypoints=future_waypoints(states, i)))
    progress = min(1.0, state.progress_s / scenario.route.length)
    return Episode(scenario.name, frames, rejected, events, progress, cfg.digest(), len(states))


def expert_waypoints(state: SimState, route: Route | None = None, cfg: ExpertConfig = DEFAULT_EXPERT,
                     dt: float = 0.5) -> np.ndarray:
    """Ground-truth-style labels for ``state``: roll the expert forward on a copy of the world."""
    route = route if route is not None else state.route
    states = [state]
    s = state
    for _ in range(HORIZON):
        s, _ = step(s, expert_action(s, route, cfg), dt)
        states.append(s)
    return future_waypoints(states, 0)
