"""Mini-batch training of the driving policy."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .dataset import FrameStore, make_batches
from .losses import LossWeights, PenaltyParams, format_breakdown, total_loss
from .model import DrivingModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 3e-4
    seed: int = 0
    log_every: int = 1


def train(model: DrivingModel, store: FrameStore, weights: LossWeights = LossWeights(),
          penalty: PenaltyParams = PenaltyParams(), cfg: TrainConfig = TrainConfig(),
          on_step: Callable[[str], None] | None = None) -> list[dict[str, float]]:
    """Adam on the full Lagrangian objective; returns the per-step loss breakdowns."""
    params = model.parameters()
    opt = ad.Adam(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed + 7919)
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        for batch in make_batches(store, cfg.batch_size, seed=cfg.seed * 100003 + epoch):
            with ad.Tape():
                out = model.forward(batch.camera, batch.lidar, batch.meas, batch.goal, mode="train", rng=rng)
                loss, br = total_loss(out, batch, weights, penalty)
            grads = ad.backward(loss)
            opt.step([grads.get(p, np.zeros_like(p.data)) for p in params])
            br["epoch"] = epoch
            history.append(br)
            if on_step is not None and step % cfg.log_every == 0:
                on_step(format_breakdown(step, br))
            step += 1
    return history
