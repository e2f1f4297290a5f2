"""Waypoints to steer/throttle/brake through a lateral and a longitudinal PID."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class PidGains:
    kp: float
    ki: float
    kd: float
    integral_clamp: float = 2.0

    def __post_init__(self) -> None:
        if min(self.kp, self.ki, self.kd, self.integral_clamp) < 0:
            raise ValueError("PID gains must be non-negative")


@dataclass(frozen=True)
class PidParams:
    lateral: PidGains = PidGains(1.0, 0.1, 0.2, 2.0)
    longitudinal: PidGains = PidGains(0.5, 0.05, 0.0, 2.0)
    target_speed_scale: float = 1.0
    brake_threshold: float = 0.4
    dt: float = 0.5
    throttle_feedforward: float = 0.1 / 3.0   # drag / a_max: holds speed at zero error
    overspeed_brake_gain: float = 0.5


@dataclass(frozen=True)
class PidState:
    lat_integral: float = 0.0
    lat_prev: float | None = None
    lon_integral: float = 0.0
    lon_prev: float | None = None


def _pid(err: float, integral: float, prev: float | None, g: PidGains, dt: float) -> tuple[float, float]:
    integral = min(g.integral_clamp, max(-g.integral_clamp, integral + err * dt))
    deriv = 0.0 if prev is None else (err - prev) / dt
    return g.kp * err + g.ki * integral + g.kd * deriv, integral


def pid_control(waypoints, current_speed: float, state: PidState = PidState(),
                params: PidParams = PidParams()) -> tuple[tuple[float, float, float], PidState]:
    wp = np.asarray(waypoints, dtype=np.float64)
    if wp.ndim != 2 or wp.shape[0] < 2:
        raise ValueError("need at least two waypoints")
    aim = 0.5 * (wp[0] + wp[1])
    heading_err = math.atan2(aim[0], aim[1]) if np.hypot(*aim) > 1e-6 else 0.0
    lat_out, lat_i = _pid(heading_err, state.lat_integral, state.lat_prev, params.lateral, params.dt)
    steer = float(np.clip(lat_out, -1.0, 1.0))

    target = float(np.hypot(*(wp[0] - wp[1]))) / params.dt * params.target_speed_scale
    if target < params.brake_threshold:
        new = replace(state, lat_integral=lat_i, lat_prev=heading_err, lon_integral=0.0, lon_prev=None)
        return (steer, 0.0, 1.0), new
    err = target - current_speed
    lon_out, lon_i = _pid(err, state.lon_integral, state.lon_prev, params.longitudinal, params.dt)
    u = lon_out + params.throttle_feedforward * target
    throttle = float(np.clip(u, 0.0, 1.0))
    brake = float(np.clip(-u * params.overspeed_brake_gain, 0.0, 1.0))
    new = PidState(lat_i, heading_err, lon_i, err)
    return (steer, throttle, brake), new
