"""Adam, written functionally so that training runs are bit-reproducible."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[list[np.ndarray], AdamState]:
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    if not state.m:
        m_prev = [np.zeros_like(p) for p in params]
        v_prev = [np.zeros_like(p) for p in params]
    else:
        m_prev, v_prev = state.m, state.v
    t = state.step + 1
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, m_prev, v_prev):
        if p.shape != g.shape:
            raise ValueError(f"param shape {p.shape} vs grad shape {g.shape}")
        # Same update as the textbook form, written with few temporaries
        # because the parameter arrays are large.
        m = np.multiply(m, beta1)
        tmp = np.multiply(g, 1.0 - beta1)
        m += tmp
        v = np.multiply(v, beta2)
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - beta2
        v += tmp
        np.multiply(v, 1.0 / bc2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += eps
        np.divide(m, tmp, out=tmp)
        tmp *= lr / bc1
        new_p.append(np.subtract(p, tmp, out=tmp))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(step=t, m=new_m, v=new_v)


class Adam:
    """Thin stateful wrapper that rebinds ``Tensor.data`` after each step."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = AdamState()

    def step(self, grads: Sequence[np.ndarray]) -> None:
        new, self.state = adam_step([p.data for p in self.params], grads, self.state,
                                    self.lr, self.beta1, self.beta2, self.eps)
        for p, d in zip(self.params, new):
            p.data = d
