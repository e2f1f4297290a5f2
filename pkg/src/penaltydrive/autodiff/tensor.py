"""Tape-based reverse-mode differentiation over float64 numpy arrays."""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

_state = threading.local()


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


def _tape_stack() -> list["Tape"]:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class _Node:
    __slots__ = ("out", "inputs", "backward", "op")

    def __init__(self, out, inputs, backward, op):
        self.out = out
        self.inputs = inputs
        self.backward = backward
        self.op = op


class Tape:
    """Records every differentiable op executed while it is the active tape.

    Use as a context manager; ``backward`` walks the recorded nodes in exact
    reverse order. A tape can be differentiated once.
    """

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        else:  # pragma: no cover - misuse guard
            raise TapeError("tape stack corrupted")

    def record(self, out: "Tensor", inputs: tuple["Tensor", ...], backward, op: str) -> None:
        if self._consumed:
            raise TapeError("cannot record on a tape that was already differentiated")
        out._node = len(self.nodes)
        out._tape = self
        self.nodes.append(_Node(out, inputs, backward, op))

    def backward(self, loss: "Tensor") -> dict["Tensor", np.ndarray]:
        if self._consumed:
            raise TapeError("backward called twice on the same tape")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        if loss._tape is not self:
            if loss.requires_grad:
                leaves[id(loss)] = loss
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if t._tape is not self:
                    leaves[key] = t
        out: dict[Tensor, np.ndarray] = {}
        for key, t in leaves.items():
            g = grads.get(key)
            if g is None:
                g = np.zeros_like(t.data)
            g = np.asarray(g, dtype=np.float64).reshape(t.data.shape)
            t.grad = g
            out[t] = g
        return out


def backward(loss: "Tensor") -> dict["Tensor", np.ndarray]:
    """Differentiate ``loss`` on the tape that produced it."""
    if loss._tape is None:
        raise TapeError("loss was not computed under a Tape")
    return loss._tape.backward(loss)


def _as_array(x) -> np.ndarray:
    arr = np.array(x, dtype=np.float64)
    arr.flags.writeable = False
    return arr


class Tensor:
    """Immutable float64 value that may carry a reference to a tape node."""

    __slots__ = ("_data", "requires_grad", "grad", "name", "_node", "_tape", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self._data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._node: int | None = None
        self._tape: Tape | None = None

    @property
    def data(self) -> np.ndarray:
        return self._data

    @data.setter
    def data(self, value) -> None:
        # Rebinding (e.g. an optimiser step) is allowed; mutation in place is not.
        self._data = _as_array(value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def item(self) -> float:
        return float(self._data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self._data

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __hash__(self) -> int:
        return id(self)

    def __eq__(self, other) -> bool:  # identity semantics; tensors key dicts
        return self is other

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by exp(-log) instead")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def tensor(x, requires_grad: bool = False) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, requires_grad=requires_grad)


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward, op: str) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape = active_tape()
        if tape is not None:
            tape.record(out, inputs, backward, op)
        else:
            # Outside a tape nothing is differentiable.
            out.requires_grad = False
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def max_with_scalar(x: Tensor, c: float) -> Tensor:
    """max(x, c) elementwise; gradient flows only where x > c strictly."""
    mask = x.data > c
    return _make(np.where(mask, x.data, float(c)), (x,), lambda g: (g * mask,), "max_with_scalar")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    mask = (x.data > lo) & (x.data < hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * mask,), "clip")


def abs_(x: Tensor) -> Tensor:
    sgn = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * sgn,), "abs")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    d = x.data
    return _make(np.log(d), (x,), lambda g: (g / d,), "log")


def sqrt(x: Tensor) -> Tensor:
    """Square root with subgradient 0 at x == 0 (keeps zero-length norms finite)."""
    out = np.sqrt(x.data)
    safe = np.where(out > 0, out, 1.0)
    return _make(out, (x,), lambda g: (np.where(out > 0, g * 0.5 / safe, 0.0),), "sqrt")


def sin(x: Tensor) -> Tensor:
    d = x.data
    return _make(np.sin(d), (x,), lambda g: (g * np.cos(d),), "sin")


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), evaluated without overflow."""
    d = x.data
    out = np.maximum(d, 0.0) + np.log1p(np.exp(-np.abs(d)))
    sig = 1.0 / (1.0 + np.exp(-d))
    return _make(out, (x,), lambda g: (g * sig,), "softplus")


def square(x: Tensor) -> Tensor:
    d = x.data
    return _make(d * d, (x,), lambda g: (2.0 * g * d,), "square")


# ------------------------------------------------------------ reductions etc.


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(a % ndim for a in axes)


def sum_(x: Tensor, axis=None) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    shape = x.shape

    def bw(g):
        if axes is not None:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return _make(np.sum(x.data, axis=axes), (x,), bw, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    n = x.size if axes is None else int(np.prod([x.shape[a] for a in axes]))
    shape = x.shape

    def bw(g):
        if axes is not None:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, shape),)

    return _make(np.mean(x.data, axis=axes), (x,), bw, "mean")


def l1_diff(a: Tensor, b, axis=None) -> Tensor:
    """Sum of absolute differences; subgradient 0 where a == b."""
    a, b = tensor(a), tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"l1_diff: shapes {a.shape} and {b.shape} differ")
    diff = a.data - b.data
    sgn = np.sign(diff)
    axes = _norm_axis(axis, a.ndim)

    def bw(g):
        if axes is not None:
            g = np.expand_dims(g, axes)
        return (g * sgn, -g * sgn)

    return _make(np.sum(np.abs(diff), axis=axes), (a, b), bw, "l1_diff")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), bw, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), bw, "log_softmax")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = tensor(a), tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _make(out, (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    out = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, (x,), lambda g: (np.transpose(g, inv),), "transpose")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


def slice_(x: Tensor, idx) -> Tensor:
    shape = x.shape

    basic = _is_basic_index(idx)

    def bw(g):
        full = np.zeros(shape)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(x.data[idx], (x,), bw, "slice")


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = tuple(tensor(t) for t in xs)
    try:
        out = np.concatenate([t.data for t in xs], axis=axis)
    except ValueError:
        raise ShapeError("concat: incompatible shapes " + ", ".join(str(t.shape) for t in xs)) from None
    sizes = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(out, xs, bw, "concat")


def expand(x: Tensor, axis: int) -> Tensor:
    return reshape(x, np.expand_dims(x.data, axis).shape)


def no_grad_value(x: Tensor) -> Tensor:
    """Detached copy: same value, no tape history."""
    return Tensor(x.data)


def parameters_grad(fn: Callable[[], Tensor], params: Iterable[Tensor]) -> tuple[float, list[np.ndarray]]:
    """Evaluate ``fn`` under a fresh tape; return (loss, grads aligned with params)."""
    params = list(params)
    with Tape():
        loss = fn()
    grads = backward(loss)
    zero = [np.zeros_like(p.data) for p in params]
    return loss.item(), [grads.get(p, z) for p, z in zip(params, zero)]
