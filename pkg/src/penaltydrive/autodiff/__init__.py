from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .optim import Adam, AdamState, adam_step
from .tensor import (
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    abs_,
    add,
    backward,
    clip,
    concat,
    exp,
    expand,
    l1_diff,
    log,
    log_softmax,
    matmul,
    max_with_scalar,
    mean,
    mul,
    parameters_grad,
    relu,
    reshape,
    sigmoid,
    sin,
    slice_,
    softmax,
    softplus,
    sqrt,
    square,
    sub,
    sum_,
    tanh,
    tensor,
    transpose,
)

__all__ = [name for name in dir() if not name.startswith("_")]
