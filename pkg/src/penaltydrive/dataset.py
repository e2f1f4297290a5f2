"""Frames, episode files and mini-batching."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import container
from .container import (BadMagicError, ChecksumError, ContainerError, TruncatedFileError,
                        VersionMismatchError)

MAGIC = b"PCSG"
VERSION = 1

__all__ = ["Frame", "Batch", "FrameStore", "write_episode", "read_episode", "make_batches",
           "split_episodes", "ContainerError", "BadMagicError", "ChecksumError",
           "TruncatedFileError", "VersionMismatchError"]


@dataclass
class Frame:
    camera: np.ndarray          # 3 x Hc x Wc in [0, 1]
    lidar: np.ndarray           # 2 x HL x WL in [0, 1]
    front_seg: np.ndarray       # 4 x Hc x Wc one-hot
    td_seg: np.ndarray          # 4 x HL x WL one-hot
    meas: np.ndarray            # speed, throttle, steer, brake
    light_state: np.ndarray     # one-hot over red, yellow, green, none
    stop_sign_flag: float
    is_red: float
    y_stop: float               # +inf means no red stop line in range
    delta_heading: float
    goal: np.ndarray            # ego-frame goal point
    waypoints: np.ndarray       # T x 2 ego-frame future positions

    def arrays(self) -> list[np.ndarray]:
        return [np.asarray(getattr(self, f.name), dtype=np.float64) for f in fields(self)]


FIELD_NAMES = [f.name for f in fields(Frame)]
_SCALARS = {"stop_sign_flag", "is_red", "y_stop", "delta_heading"}


def _shapes_of(frame: Frame) -> dict[str, list[int]]:
    return {name: list(np.shape(getattr(frame, name))) for name in FIELD_NAMES}


def write_episode(path: str | Path, frames: Sequence[Frame], meta: dict | None = None) -> None:
    """Serialise frames; every float is stored as little-endian float64."""
    shapes = _shapes_of(frames[0]) if frames else {}
    for i, fr in enumerate(frames):
        if _shapes_of(fr) != shapes:
            raise ValueError(f"frame {i} shapes differ from frame 0")
    header = {"format_version": VERSION, "fields": FIELD_NAMES, "shapes": shapes, **(meta or {})}
    container.write(path, MAGIC, VERSION, header, [container.pack_arrays(fr.arrays()) for fr in frames])


def read_episode(path: str | Path) -> list[Frame]:
    return read_episode_with_header(path)[0]


def read_episode_with_header(path: str | Path) -> tuple[list[Frame], dict]:
    header, records = container.read(path, MAGIC, VERSION)
    if not records:
        return [], header
    names = header["fields"]
    if names != FIELD_NAMES:
        raise VersionMismatchError(f"field layout {names} does not match {FIELD_NAMES}")
    shapes = [tuple(header["shapes"][n]) for n in names]
    frames = []
    for rec in records:
        arrs = container.unpack_arrays(rec, shapes)
        kw = {n: (float(a) if n in _SCALARS else a) for n, a in zip(names, arrs)}
        frames.append(Frame(**kw))
    return frames, header


@dataclass
class Batch:
    camera: np.ndarray        # N x 3 x Hc x Wc
    lidar: np.ndarray         # N x 2 x HL x WL
    front_seg: np.ndarray     # N x 4 x Hc x Wc
    td_seg: np.ndarray        # N x 4 x HL x WL
    meas: np.ndarray          # N x 4
    light_state: np.ndarray   # N x 4
    stop_sign_flag: np.ndarray
    is_red: np.ndarray
    y_stop: np.ndarray
    delta_heading: np.ndarray
    goal: np.ndarray          # N x 2
    waypoints: np.ndarray     # N x T x 2
    index: np.ndarray         # frame indices into the source store

    def __len__(self) -> int:
        return self.camera.shape[0]


class FrameStore:
    """Column-stacked frames; segmentations kept as uint8 class maps to save memory."""

    def __init__(self, frames: Sequence[Frame]):
        if not frames:
            raise ValueError("no frames")
        self.n = len(frames)
        self.camera = np.stack([f.camera for f in frames])
        self.lidar = np.stack([f.lidar for f in frames])
        self.front_cls = np.stack([np.argmax(f.front_seg, axis=0) for f in frames]).astype(np.uint8)
        self.td_cls = np.stack([np.argmax(f.td_seg, axis=0) for f in frames]).astype(np.uint8)
        self.meas = np.stack([f.meas for f in frames])
        self.light_state = np.stack([f.light_state for f in frames])
        self.stop_sign_flag = np.array([f.stop_sign_flag for f in frames])
        self.is_red = np.array([f.is_red for f in frames])
        self.y_stop = np.array([f.y_stop for f in frames])
        self.delta_heading = np.array([f.delta_heading for f in frames])
        self.goal = np.stack([f.goal for f in frames])
        self.waypoints = np.stack([f.waypoints for f in frames])

    def __len__(self) -> int:
        return self.n

    def batch(self, idx: np.ndarray) -> Batch:
        idx = np.asarray(idx)
        hot = lambda cls: (np.arange(4)[None, :, None, None] == cls[:, None]).astype(np.float64)  # noqa: E731
        return Batch(camera=self.camera[idx], lidar=self.lidar[idx], front_seg=hot(self.front_cls[idx]),
                     td_seg=hot(self.td_cls[idx]), meas=self.meas[idx], light_state=self.light_state[idx],
                     stop_sign_flag=self.stop_sign_flag[idx], is_red=self.is_red[idx],
                     y_stop=self.y_stop[idx], delta_heading=self.delta_heading[idx],
                     goal=self.goal[idx], waypoints=self.waypoints[idx], index=idx)


def batch_from_frames(frames: Sequence[Frame]) -> Batch:
    return FrameStore(frames).batch(np.arange(len(frames)))


def _flatten(episodes) -> list[Frame]:
    out: list[Frame] = []
    for ep in episodes:
        out.extend(ep.frames if hasattr(ep, "frames") else ep)
    return out


def make_batches(episodes, batch_size: int, seed: int) -> Iterator[Batch]:
    """One epoch of shuffled batches; the final short batch is dropped.

    ``episodes`` is a FrameStore or a sequence of frame lists. Contrastive
    alignment needs negatives, so ``batch_size`` must be at least 2.
    """
    if batch_size < 2:
        raise ValueError(f"batch_size must be >= 2, got {batch_size}")
    store = episodes if isinstance(episodes, FrameStore) else FrameStore(_flatten(episodes))
    order = np.random.default_rng(seed).permutation(len(store))
    for k in range(len(store) // batch_size):
        yield store.batch(order[k * batch_size:(k + 1) * batch_size])


def split_episodes(episodes: Sequence, val_fraction: float, seed: int) -> tuple[list, list]:
    """Split by whole episode so neighbouring frames never straddle train and val."""
    n = len(episodes)
    n_val = int(math.floor(n * val_fraction))
    order = np.random.default_rng(seed).permutation(n)
    val_idx = set(order[:n_val].tolist())
    train = [ep for i, ep in enumerate(episodes) if i not in val_idx]
    val = [ep for i, ep in enumerate(episodes) if i in val_idx]
    return train, val
