"""White-box camera attacks: FGSM and a trained dot-sticker patch.

Both attacks maximise the training objective of a frozen model. Model
parameters are only read, never written.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import container
from .autodiff import Tape, Tensor, backward
from .dataset import Batch, Frame, FrameStore, batch_from_frames
from .expert import DEFAULT_EXPERT, ExpertConfig, expert_waypoints
from .losses import LossWeights, NumericalError, PenaltyParams, total_loss
from .model import DrivingModel
from .townsim.sim import SimState

log = logging.getLogger(__name__)

DOT_MAGIC = b"PDOT"
DOT_VERSION = 1


# ---------------------------------------------------------------------------
# FGSM


def input_gradient(model: DrivingModel, batch: Batch, weights: LossWeights = LossWeights(),
                   params: PenaltyParams = PenaltyParams()) -> np.ndarray:
    """d(total loss)/d(camera) for an eval-mode forward pass.

    The alignment term is a batch contrast and is undefined for one frame,
    so single-frame batches drop it.
    """
    if len(batch) < 2:
        weights = replace(weights, eta_align=0.0)
    cam = Tensor(batch.camera, requires_grad=True)
    with Tape():
        out = model.forward(cam, batch.lidar, batch.meas, batch.goal, mode="eval")
        loss, _ = total_loss(out, batch, weights, params)
    return backward(loss)[cam]


def fgsm(model: DrivingModel, frame: Frame, eps: float, weights: LossWeights = LossWeights(),
         params: PenaltyParams = PenaltyParams()) -> np.ndarray:
    """Return the frame's camera image pushed one signed-gradient step of size ``eps``.

    Each frame is attacked alone with its own labels.
    """
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    x = np.asarray(frame.camera, dtype=np.float64)
    if eps == 0:
        return x.copy()
    g = input_gradient(model, batch_from_frames([frame]), weights, params)[0]
    return linf_step(x, g, eps)


def linf_step(x: np.ndarray, g: np.ndarray, eps: float) -> np.ndarray:
    """clip(x + eps * sign(g), 0, 1) with the L-inf bound enforced in floating point.

    Rounding of ``x + eps`` can overshoot by one ulp; such pixels are nudged
    back toward ``x`` so that ``abs(x' - x) <= eps`` holds bit-exactly.
    """
    out = np.clip(x + eps * np.sign(g), 0.0, 1.0)
    over = np.abs(out - x) > eps
    while over.any():
        out[over] = np.nextafter(out[over], x[over])
        over = np.abs(out - x) > eps
    return out


def fgsm_batch(model: DrivingModel, frames: Sequence[Frame], eps: float, **kw) -> np.ndarray:
    return np.stack([fgsm(model, f, eps, **kw) for f in frames])


def frame_from_observation(obs: dict, waypoints: np.ndarray) -> Frame:
    return Frame(camera=obs["camera"], lidar=obs["lidar"], front_seg=obs["front_seg"], td_seg=obs["td_seg"],
                 meas=obs["meas"], light_state=obs["light_state"], stop_sign_flag=obs["stop_sign_flag"],
                 is_red=obs["is_red"], y_stop=obs["y_stop"], delta_heading=obs["delta_heading"],
                 goal=obs["goal"], waypoints=np.asarray(waypoints, dtype=np.float64))


def fgsm_hook(model: DrivingModel, eps: float, expert: ExpertConfig = DEFAULT_EXPERT, dt: float = 0.5,
              weights: LossWeights = LossWeights(), params: PenaltyParams = PenaltyParams()):
    """Closed-loop camera attack; ground truth comes from an expert rollout on a copy of the world."""

    def attack(camera: np.ndarray, state: SimState, obs: dict) -> np.ndarray:
        truth = expert_waypoints(state, cfg=expert, dt=dt)
        frame = frame_from_observation(dict(obs, camera=camera), truth)
        return fgsm(model, frame, eps, weights, params)

    return attack


# ---------------------------------------------------------------------------
# dot patch


@dataclass
class DotPattern:
    """Radially fading dots; geometry is fixed, colours and peak alphas are trainable."""

    centers: np.ndarray      # n x 2, (row, col) as a fraction of the image
    radii: np.ndarray        # n, pixels
    colors: np.ndarray       # n x 3 in [0, 1]
    peak_alpha: np.ndarray   # n in [0, 1]

    def __post_init__(self) -> None:
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 2)
        n = len(self.centers)
        self.radii = np.asarray(self.radii, dtype=np.float64).reshape(n)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(n, 3)
        self.peak_alpha = np.asarray(self.peak_alpha, dtype=np.float64).reshape(n)
        if np.any(self.radii <= 0):
            raise ValueError("dot radii must be positive")
        if np.any((self.colors < 0) | (self.colors > 1)) or np.any((self.peak_alpha < 0) | (self.peak_alpha > 1)):
            raise ValueError("dot colours and alphas must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.centers)


def grid_pattern(n_side: int = 3, radius: float = 5.0, alpha: float = 0.3, seed: int = 0) -> DotPattern:
    """n_side x n_side dots at cell centres; random initial colours."""
    f = (np.arange(n_side) + 0.5) / n_side
    centers = np.array([(r, c) for r in f for c in f])
    rng = np.random.default_rng(seed)
    n = len(centers)
    return DotPattern(centers, np.full(n, radius), rng.uniform(0, 1, (n, 3)), np.full(n, alpha))


def dot_profiles(pattern: DotPattern, hw: tuple[int, int]) -> np.ndarray:
    """n x H x W radial profiles max(0, 1 - d/r), pixel centres at integer coordinates."""
    h, w = hw
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    cr = pattern.centers[:, 0] * (h - 1)
    cc = pattern.centers[:, 1] * (w - 1)
    d = np.hypot(rows[None] - cr[:, None, None], cols[None] - cc[:, None, None])
    return np.maximum(0.0, 1.0 - d / pattern.radii[:, None, None])


def _blend(image, colors, alphas, profiles: np.ndarray):
    """Composite dots in order; works on Tensors (differentiable) and on arrays."""
    out = image
    for k in range(profiles.shape[0]):
        a = alphas[k] * profiles[k]               # H x W
        c = ad.reshape(colors[k], (3, 1, 1)) if isinstance(colors, Tensor) else colors[k].reshape(3, 1, 1)
        out = out * (1.0 - a) + a * c
    return out


def apply_dots(image: np.ndarray, pattern: DotPattern) -> np.ndarray:
    """Blend the pattern over a C x H x W (or N x C x H x W) image in [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    prof = dot_profiles(pattern, image.shape[-2:])
    out = _blend(image, pattern.colors, pattern.peak_alpha, prof)
    return np.clip(out, 0.0, 1.0)


def dot_hook(pattern: DotPattern):
    def attack(camera: np.ndarray, state: SimState, obs: dict) -> np.ndarray:
        return apply_dots(camera, pattern)

    return attack


@dataclass
class DotTrainResult:
    pattern: DotPattern
    best_loss: float
    history: list[float] = field(default_factory=list)
    diverged: bool = False


def _attack_loss(model, batch: Batch, colors, alphas, prof, weights, params):
    cam = _blend(Tensor(batch.camera), colors, alphas, prof)
    out = model.forward(cam, batch.lidar, batch.meas, batch.goal, mode="eval")
    loss, _ = total_loss(out, batch, weights, params)
    return loss


def dot_attack_train(model: DrivingModel, data: FrameStore | Sequence[Frame], n_dots: int = 9,
                     steps: int = 50, lr: float = 0.05, batch_size: int | None = None, seed: int = 0,
                     radius: float = 5.0, weights: LossWeights = LossWeights(),
                     params: PenaltyParams = PenaltyParams()) -> DotTrainResult:
    """Gradient ascent on dot colours and peak alphas (projected to [0, 1]).

    Each step scores the whole attack set (or a random mini-batch when
    ``batch_size`` is given); the pattern with the highest loss seen is
    returned, so with full-set scoring the result never loses to the
    initial pattern. A non-finite loss stops
    training and keeps the last finite pattern.
    """
    side = int(round(math.sqrt(n_dots)))
    if side * side != n_dots:
        raise ValueError(f"n_dots must be a square number, got {n_dots}")
    store = data if isinstance(data, FrameStore) else FrameStore(list(data))
    pattern = grid_pattern(side, radius, seed=seed)
    prof = dot_profiles(pattern, store.camera.shape[-2:])
    rng = np.random.default_rng(seed)
    colors, alphas = pattern.colors.copy(), pattern.peak_alpha.copy()
    state = ad.AdamState()
    best = DotTrainResult(pattern, -math.inf)
    for it in range(steps):
        if batch_size is None or batch_size >= len(store):
            batch = store.batch(np.arange(len(store)))
        else:
            batch = store.batch(np.sort(rng.choice(len(store), size=batch_size, replace=False)))
        tc, ta = Tensor(colors, requires_grad=True), Tensor(alphas, requires_grad=True)
        try:
            with Tape():
                loss = _attack_loss(model, batch, tc, ta, prof, weights, params)
        except NumericalError:
            best.diverged = True
            log.warning("dot attack diverged at step %d", it)
            break
        val = loss.item()
        best.history.append(val)
        if val > best.best_loss:
            best.pattern = DotPattern(pattern.centers, pattern.radii, colors.copy(), alphas.copy())
            best.best_loss = val
        g = backward(loss)
        # Ascent: hand Adam the negated gradient.
        (colors, alphas), state = ad.adam_step([colors, alphas], [-g[tc], -g[ta]], state, lr=lr)
        colors, alphas = np.clip(colors, 0, 1), np.clip(alphas, 0, 1)
    return best


def save_pattern(path: str | Path, pattern: DotPattern, meta: dict | None = None) -> None:
    header = {"n_dots": len(pattern), "meta": meta or {}}
    arrays = [pattern.centers, pattern.radii, pattern.colors, pattern.peak_alpha]
    container.write(path, DOT_MAGIC, DOT_VERSION, header, [container.pack_arrays(arrays)])


def load_pattern(path: str | Path) -> DotPattern:
    header, records = container.read(path, DOT_MAGIC, DOT_VERSION)
    n = int(header["n_dots"])
    if len(records) != 1:
        raise container.ContainerError(f"expected 1 record, found {len(records)}")
    centers, radii, colors, alpha = container.unpack_arrays(records[0], [(n, 2), (n,), (n, 3), (n,)])
    return DotPattern(centers, radii, colors, alpha)
