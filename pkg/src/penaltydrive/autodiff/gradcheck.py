"""Central-difference gradient verification."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


def grad_check(
    f: Callable[[], Tensor],
    x: Tensor | Sequence[Tensor],
    h: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` is a closure reading the current value of every tensor in ``x``; the
    checker rebinds their data while probing. Error per coordinate is
    ``|analytic - numeric| / max(1, |numeric|)``. With ``max_coords`` set, a
    random subset of coordinates is probed in each tensor.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    with Tape():
        loss = f()
    grads = backward(loss)
    worst = 0.0
    rng = rng if rng is not None else np.random.default_rng(0)
    for t in xs:
        analytic = grads.get(t, np.zeros_like(t.data)).reshape(-1)
        base = t.data.copy()
        flat = base.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        try:
            for i in idx:
                probe = flat.copy()
                probe[i] = flat[i] + h
                t.data = probe.reshape(base.shape)
                fp = f().item()
                probe[i] = flat[i] - h
                t.data = probe.reshape(base.shape)
                fm = f().item()
                numeric = (fp - fm) / (2.0 * h)
                err = abs(analytic[i] - numeric) / max(1.0, abs(numeric))
                worst = max(worst, err)
        finally:
            t.data = base
    return worst
