"""Synthetic front camera, BEV occupancy and segmentation ground truth.

The camera is the only view that carries traffic-light colour and stop-sign
plates; geometry (road surface, vehicle footprints) appears in every view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import Pose2D, ego_to_world_array, world_to_ego
from .townsim.sim import SimState
from .townsim.world import Color, light_color_at

# Segmentation channels.
DRIVABLE, NON_DRIVABLE, OBJECT, OTHER = range(4)

SKY = np.array([0.55, 0.75, 0.95])
GRASS = np.array([0.35, 0.55, 0.25])
ROAD = np.array([0.40, 0.40, 0.40])
LINE_PAINT = np.array([0.95, 0.95, 0.95])
VEHICLE = np.array([0.10, 0.20, 0.80])
SIGN_PLATE = np.array([0.85, 0.00, 0.55])
LIGHT_RGB = {Color.RED: np.array([1.0, 0.0, 0.0]),
             Color.YELLOW: np.array([1.0, 0.85, 0.0]),
             Color.GREEN: np.array([0.0, 1.0, 0.0])}


@dataclass(frozen=True)
class SensorConfig:
    cam_h: int = 32          # paper: 300 px per camera
    cam_w: int = 96          # paper: 400 px per camera, three cameras
    horizon: float = 11.5    # image row of the horizon
    focal_v: float = 26.0
    focal_h: float = 48.0
    cam_height: float = 1.5
    bev_size: int = 64       # paper: 256 x 256 top-down segmentation
    bev_res: float = 0.5     # metres per BEV cell
    signal_range: float = 30.0
    signal_setback: float = 10.0


DEFAULT_SENSORS = SensorConfig()


@lru_cache(maxsize=8)
def _camera_ground(cfg: SensorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Ego-frame ground coordinates of every below-horizon camera pixel."""
    rows = np.arange(cfg.cam_h, dtype=np.float64)
    cols = np.arange(cfg.cam_w, dtype=np.float64)
    below = rows > cfg.horizon
    d = np.full(cfg.cam_h, np.nan)
    d[below] = cfg.cam_height * cfg.focal_v / (rows[below] - cfg.horizon)
    fwd = np.repeat(d[:, None], cfg.cam_w, axis=1)
    lat = (cols[None, :] - (cfg.cam_w - 1) / 2.0) * fwd / cfg.focal_h
    pts = np.stack([lat, fwd], axis=-1)
    pts.flags.writeable = False
    mask = np.repeat(below[:, None], cfg.cam_w, axis=1)
    return pts, mask


@lru_cache(maxsize=8)
def _bev_grid(cfg: SensorConfig) -> np.ndarray:
    n, r = cfg.bev_size, cfg.bev_res
    ys = n * r - (np.arange(n) + 0.5) * r          # row 0 is the far edge
    xs = -n * r / 2 + (np.arange(n) + 0.5) * r
    pts = np.stack(np.meshgrid(xs, ys, indexing="xy"), axis=-1)
    pts.flags.writeable = False
    return pts


def _boxes(state: SimState) -> list[tuple[float, float, float, float, float]]:
    cfg = state.config
    out = [(n.pose.x, n.pose.y, n.pose.heading, cfg.vehicle_length, cfg.vehicle_width) for n in state.npcs]
    out += [(o.x, o.y, o.heading, o.length, o.width) for o in state.map.obstacles]
    return out


def _footprint(world_pts: np.ndarray, boxes) -> np.ndarray:
    mask = np.zeros(world_pts.shape[:-1], dtype=bool)
    for x, y, h, length, width in boxes:
        c, s = math.cos(h), math.sin(h)
        dx, dy = world_pts[..., 0] - x, world_pts[..., 1] - y
        u = dx * c + dy * s
        v = -dx * s + dy * c
        mask |= (np.abs(u) <= length / 2) & (np.abs(v) <= width / 2)
    return mask


def _stop_paint(world_pts: np.ndarray, state: SimState) -> np.ndarray:
    mask = np.zeros(world_pts.shape[:-1], dtype=bool)
    for line in state.map.stop_lines:
        c, s = math.cos(line.heading), math.sin(line.heading)
        dx, dy = world_pts[..., 0] - line.position[0], world_pts[..., 1] - line.position[1]
        u = dx * c + dy * s
        v = dx * s - dy * c
        mask |= (u >= -0.6) & (u <= 0.0) & (np.abs(v) <= line.half_width)
    return mask


def _ground_semantics(world_pts: np.ndarray, valid: np.ndarray, state: SimState) -> np.ndarray:
    cls = np.full(world_pts.shape[:-1], OTHER, dtype=np.int64)
    pts = np.where(valid[..., None], world_pts, 0.0)
    drivable = state.map.drivable(pts) & valid
    objects = _footprint(pts, _boxes(state)) & valid
    cls[valid] = NON_DRIVABLE
    cls[drivable] = DRIVABLE
    cls[objects & drivable] = OBJECT
    cls[objects & ~drivable] = OTHER
    return cls


def one_hot(classes: np.ndarray, n: int = 4) -> np.ndarray:
    """(H, W) class map -> (n, H, W) float one-hot grid."""
    return (np.arange(n)[:, None, None] == classes[None]).astype(np.float64)


def _signal_pixel(cfg: SensorConfig, lat: float, fwd: float, height: float) -> tuple[int, int]:
    row = cfg.horizon - cfg.focal_v * (height - cfg.cam_height) / fwd
    col = (cfg.cam_w - 1) / 2.0 + cfg.focal_h * lat / fwd
    return int(round(row)), int(round(col))


def _paint_block(img: np.ndarray, row: int, col: int, half: int, rgb: np.ndarray) -> None:
    h, w = img.shape[1:]
    r0, r1 = max(0, row - half), min(h, row + half + 1)
    c0, c1 = max(0, col - half), min(w, col + half + 1)
    if r0 < r1 and c0 < c1:
        img[:, r0:r1, c0:c1] = rgb[:, None, None]


def visible_signals(state: SimState, cfg: SensorConfig = DEFAULT_SENSORS):
    """Stop lines facing the ego within signal range: (line, ego-frame x, ego-frame y)."""
    out = []
    for line in state.map.stop_lines:
        w = world_to_ego(line.position, state.ego.pose)
        if not (0.0 < w.y <= cfg.signal_range) or abs(w.x) > 10.0:
            continue
        if math.cos(line.heading - state.ego.pose.heading) < 0.7:
            continue
        out.append((line, w.x, w.y))
    return out


def render_camera(state: SimState, cfg: SensorConfig = DEFAULT_SENSORS) -> np.ndarray:
    """3 x H x W RGB raster in [0, 1]."""
    ego_pts, valid = _camera_ground(cfg)
    world = ego_to_world_array(np.nan_to_num(ego_pts), state.ego.pose)
    cls = _ground_semantics(world, valid, state)
    img = np.empty((3, cfg.cam_h, cfg.cam_w))
    img[:] = SKY[:, None, None]
    img[:, valid] = GRASS[:, None]
    img[:, cls == DRIVABLE] = ROAD[:, None]
    paint = _stop_paint(world, state) & (cls == DRIVABLE)
    img[:, paint] = LINE_PAINT[:, None]
    vehicles = _footprint(np.where(valid[..., None], world, 0.0), _boxes(state)) & valid
    img[:, vehicles] = VEHICLE[:, None]
    for line, lat, fwd in visible_signals(state, cfg):
        far = fwd + cfg.signal_setback
        half = 2 if fwd <= 15.0 else 1
        if line.light_id is not None:
            color = light_color_at(state.map.light(line.light_id), state.time)
            row, col = _signal_pixel(cfg, lat, far, 4.5)
            _paint_block(img, row, col, half, LIGHT_RGB[color])
        else:
            row, col = _signal_pixel(cfg, lat + 3.0, far, 2.5)
            _paint_block(img, row, col, half, SIGN_PLATE)
    return img


def render_lidar(state: SimState, cfg: SensorConfig = DEFAULT_SENSORS) -> np.ndarray:
    """2 x N x N BEV pseudo-image: channel 0 obstacle occupancy, channel 1 drivable area."""
    world = ego_to_world_array(_bev_grid(cfg), state.ego.pose)
    out = np.zeros((2, cfg.bev_size, cfg.bev_size))
    out[0] = _footprint(world, _boxes(state))
    out[1] = state.map.drivable(world)
    return out


def render_front_seg_gt(state: SimState, cfg: SensorConfig = DEFAULT_SENSORS) -> np.ndarray:
    ego_pts, valid = _camera_ground(cfg)
    world = ego_to_world_array(np.nan_to_num(ego_pts), state.ego.pose)
    return one_hot(_ground_semantics(world, valid, state))


def render_topdown_seg_gt(state: SimState, cfg: SensorConfig = DEFAULT_SENSORS) -> np.ndarray:
    world = ego_to_world_array(_bev_grid(cfg), state.ego.pose)
    valid = np.ones(world.shape[:-1], dtype=bool)
    return one_hot(_ground_semantics(world, valid, state))


def measurement_vec(prev: "VehicleState") -> np.ndarray:  # noqa: F821
    """[speed, throttle, steer, brake] of the previous frame."""
    return np.array([prev.speed, prev.throttle, prev.steer, prev.brake], dtype=np.float64)
