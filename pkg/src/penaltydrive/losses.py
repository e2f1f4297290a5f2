"""Training objective: imitation, reconstruction, alignment and traffic-rule penalties."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class NumericalError(FloatingPointError):
    """A loss term evaluated to NaN or inf."""

    def __init__(self, term: str):
        super().__init__(f"loss term {term!r} is not finite")
        self.term = term


@dataclass(frozen=True)
class PenaltyParams:
    dt: float = 0.5
    eps_v: float = 0.5
    v_lb: float = 2.0
    eps_a: float = 5.0
    c: tuple[float, ...] | None = None   # waypoint weights; uniform when None

    def weights(self, T: int) -> np.ndarray:
        c = np.full(T, 1.0 / T) if self.c is None else np.asarray(self.c, dtype=np.float64)
        if c.shape != (T,):
            raise ValueError(f"need {T} waypoint weights, got {c.shape}")
        if abs(c.sum() - 1.0) > 1e-12 or (c < 0).any():
            raise ValueError("waypoint weights must be non-negative and sum to 1")
        return c


@dataclass
class PenaltyContext:
    """Per-frame rule facts, batched along the first axis."""

    is_red: np.ndarray
    y_stop: np.ndarray
    is_stop_sign: np.ndarray
    delta_heading: np.ndarray
    params: PenaltyParams = field(default_factory=PenaltyParams)

    @classmethod
    def single(cls, is_red=0, y_stop=math.inf, is_stop_sign=0, delta_heading=0.0,
               params: PenaltyParams | None = None) -> "PenaltyContext":
        return cls(np.array([float(is_red)]), np.array([float(y_stop)]), np.array([float(is_stop_sign)]),
                   np.array([float(delta_heading)]), params or PenaltyParams())

    @classmethod
    def from_batch(cls, batch, params: PenaltyParams | None = None) -> "PenaltyContext":
        return cls(np.asarray(batch.is_red, dtype=np.float64), np.asarray(batch.y_stop, dtype=np.float64),
                   np.asarray(batch.stop_sign_flag, dtype=np.float64),
                   np.asarray(batch.delta_heading, dtype=np.float64), params or PenaltyParams())


@dataclass(frozen=True)
class LossWeights:
    eta_front: float = 1.0
    eta_td: float = 1.0
    eta_light: float = 1.0
    eta_stop: float = 1.0
    eta_align: float = 1.0
    lambda_red: float = 0.5
    lambda_speed: float = 0.05
    lambda_stop: float = 0.5

    def __post_init__(self) -> None:
        for k, v in self.__dict__.items():
            if v < 0:
                raise ValueError(f"{k} must be >= 0")


def _batched(pred) -> tuple[Tensor, bool]:
    p = ad.tensor(pred)
    if p.ndim == 2:
        return ad.expand(p, 0), True
    return p, False


def _finish(per_frame: Tensor, single: bool) -> Tensor:
    return per_frame.reshape(()) if single else per_frame


# ------------------------------------------------------------------- imitation


def policy_loss(pred, truth) -> Tensor:
    """Per-frame sum over waypoints of the L1 distance; scalar for a single (T, 2) input."""
    p, single = _batched(pred)
    t = np.asarray(truth, dtype=np.float64)
    t = t[None] if single else t
    if p.shape != t.shape:
        raise ad.ShapeError(f"policy_loss: prediction {p.shape} vs truth {t.shape}")
    return _finish(ad.l1_diff(p, t, axis=(1, 2)), single)


# ------------------------------------------------------------------- alignment


def sym_kl_logvar(mu1: Tensor, lv1: Tensor, mu2: Tensor, lv2: Tensor) -> Tensor:
    """Symmetrised KL between diagonal Gaussians given log-variances; sums the last axis."""
    d2 = ad.square(ad.sub(mu1, mu2))
    v1, v2 = ad.exp(lv1), ad.exp(lv2)
    inv1, inv2 = ad.exp(-1.0 * ad.tensor(lv1)), ad.exp(-1.0 * ad.tensor(lv2))
    terms = (v1 + d2) * inv2 * 0.25 + (v2 + d2) * inv1 * 0.25 - 0.5
    return ad.sum_(terms, axis=-1)


def sym_kl(p, q) -> Tensor:
    """0.5 KL(p||q) + 0.5 KL(q||p) for diagonal Gaussians given as (mean, variance)."""
    mu1, var1 = p
    mu2, var2 = q
    for v in (var1, var2):
        arr = v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)
        if (arr <= 0).any():
            raise ValueError("variances must be positive")
    lv1 = ad.log(ad.tensor(np.asarray(var1, dtype=np.float64)) if not isinstance(var1, Tensor) else var1)
    lv2 = ad.log(ad.tensor(np.asarray(var2, dtype=np.float64)) if not isinstance(var2, Tensor) else var2)
    mu1 = ad.tensor(np.asarray(mu1, dtype=np.float64)) if not isinstance(mu1, Tensor) else mu1
    mu2 = ad.tensor(np.asarray(mu2, dtype=np.float64)) if not isinstance(mu2, Tensor) else mu2
    return sym_kl_logvar(mu1, lv1, mu2, lv2)


def pairwise_sym_kl(g1: tuple[Tensor, Tensor], g2: tuple[Tensor, Tensor]) -> Tensor:
    """N x N matrix D[i, j] = sym_kl(g1[i], g2[j]) from (mean, log-variance) batches."""
    mu1, lv1 = (ad.expand(ad.tensor(t), 1) for t in g1)
    mu2, lv2 = (ad.expand(ad.tensor(t), 0) for t in g2)
    return sym_kl_logvar(mu1, lv1, mu2, lv2)


def contrastive_align(g1: tuple[Tensor, Tensor], g2: tuple[Tensor, Tensor], eps_a: float) -> Tensor:
    """Same-frame pairs are pulled together, other pairs pushed at least ``eps_a`` apart."""
    n = ad.tensor(g1[0]).shape[0]
    if n < 2:
        raise ValueError("contrastive alignment needs a batch of at least 2")
    D = pairwise_sym_kl(g1, g2)
    E = np.eye(n)
    hinge = ad.max_with_scalar(ad.sub(eps_a, D), 0.0)
    return ad.mean(D * E + hinge * (1.0 - E))


# -------------------------------------------------------------------- penalties


def red_light_penalty(pred, ctx: PenaltyContext) -> Tensor:
    p, single = _batched(pred)
    T = p.shape[1]
    c = ctx.params.weights(T)
    red = np.asarray(ctx.is_red, dtype=np.float64)
    y_stop = np.where(red > 0, np.asarray(ctx.y_stop, dtype=np.float64), 0.0)
    over = ad.max_with_scalar(ad.sub(p[:, :, 1], y_stop[:, None]), 0.0)
    per = ad.sum_(over * c[None, :], axis=1) * red
    return _finish(per, single)


def estimated_speed(pred, dt: float) -> Tensor:
    """Speed implied by the first two predicted waypoints."""
    p, single = _batched(pred)
    if p.shape[1] < 2:
        raise ValueError("need at least two waypoints")
    diff = ad.sub(p[:, 0, :], p[:, 1, :])
    return _finish(ad.sqrt(ad.sum_(ad.square(diff), axis=1)) * (1.0 / dt), single)


def stop_sign_penalty(pred, ctx: PenaltyContext) -> Tensor:
    p, single = _batched(pred)
    v = estimated_speed(p, ctx.params.dt)
    flag = np.asarray(ctx.is_stop_sign, dtype=np.float64)
    return _finish(ad.max_with_scalar(v - ctx.params.eps_v, 0.0) * flag, single)


def curvature_speed_penalty(pred, ctx: PenaltyContext) -> Tensor:
    p, single = _batched(pred)
    v = estimated_speed(p, ctx.params.dt)
    # |delta| keeps left turns from rewarding speed; clamp keeps the sine monotone.
    turn = np.sin(np.minimum(np.abs(np.asarray(ctx.delta_heading, dtype=np.float64)), math.pi / 2))
    return _finish(ad.max_with_scalar(v - ctx.params.v_lb, 0.0) * turn, single)


# ------------------------------------------------------------------ total loss


def seg_cross_entropy(logits: Tensor, onehot: np.ndarray) -> Tensor:
    """Mean over frames and pixels of the channel-wise cross entropy (channel axis 1)."""
    lp = ad.log_softmax(logits, axis=1)
    per_pixel = ad.sum_(lp * onehot, axis=1)
    return -1.0 * ad.mean(per_pixel)


def class_cross_entropy(logits: Tensor, onehot: np.ndarray) -> Tensor:
    lp = ad.log_softmax(logits, axis=1)
    return -1.0 * ad.mean(ad.sum_(lp * onehot, axis=1))


def binary_cross_entropy(logit: Tensor, target: np.ndarray) -> Tensor:
    z = logit.reshape(-1)
    y = np.asarray(target, dtype=np.float64).reshape(-1)
    return ad.mean(ad.softplus(z) - z * y)


TERMS = ("policy", "front_seg", "td_seg", "light", "stop", "align", "p_red", "p_stop", "p_speed")


def total_loss(outputs, batch, weights: LossWeights = LossWeights(),
               params: PenaltyParams = PenaltyParams()) -> tuple[Tensor, dict[str, float]]:
    """Lagrangian objective with fixed multipliers.

    Returns the scalar loss and a breakdown of the *weighted* terms, whose sum
    is the loss. Terms with zero weight are skipped entirely.
    """
    ctx = PenaltyContext.from_batch(batch, params)
    pred = outputs.waypoints
    parts: dict[str, Tensor] = {"policy": ad.mean(policy_loss(pred, batch.waypoints))}
    plan = [
        ("front_seg", weights.eta_front, lambda: seg_cross_entropy(outputs.front_seg_logits, batch.front_seg)),
        ("td_seg", weights.eta_td, lambda: seg_cross_entropy(outputs.td_seg_logits, batch.td_seg)),
        ("light", weights.eta_light, lambda: class_cross_entropy(outputs.light_logits, batch.light_state)),
        ("stop", weights.eta_stop, lambda: binary_cross_entropy(outputs.stop_logit, batch.stop_sign_flag)),
        ("align", weights.eta_align, lambda: contrastive_align(outputs.gauss_img, outputs.gauss_lidar, params.eps_a)),
        ("p_red", weights.lambda_red, lambda: ad.mean(red_light_penalty(pred, ctx))),
        ("p_stop", weights.lambda_stop, lambda: ad.mean(stop_sign_penalty(pred, ctx))),
        ("p_speed", weights.lambda_speed, lambda: ad.mean(curvature_speed_penalty(pred, ctx))),
    ]
    for name, w, fn in plan:
        if w > 0:
            parts[name] = fn() * w
    breakdown = {}
    total = None
    for name in TERMS:
        if name not in parts:
            continue
        val = parts[name].item()
        if not math.isfinite(val):
            raise NumericalError(name)
        breakdown[name] = val
        total = parts[name] if total is None else total + parts[name]
    breakdown["total"] = total.item()
    return total, breakdown


def format_breakdown(step: int, breakdown: dict[str, float]) -> str:
    """One machine-readable log line: ``step=12 total=... policy=...``."""
    items = [f"step={step}"] + [f"{k}={v:.10g}" for k, v in breakdown.items()]
    return " ".join(items)
