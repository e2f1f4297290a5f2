"""Parameter checkpoints in the shared binary container (magic ``PCKP``)."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .. import container
from .tensor import Tensor

MAGIC = b"PCKP"
VERSION = 1


def save_checkpoint(path: str | Path, params: Mapping[str, Tensor | np.ndarray],
                    meta: dict[str, Any] | None = None) -> None:
    names = sorted(params)
    arrays = [np.asarray(params[n].data if isinstance(params[n], Tensor) else params[n]) for n in names]
    header = {"names": names, "shapes": [list(a.shape) for a in arrays], "meta": meta or {}}
    container.write(path, MAGIC, VERSION, header, [container.pack_arrays([a]) for a in arrays])


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    header, records = container.read(path, MAGIC, VERSION)
    out = {}
    for name, shape, rec in zip(header["names"], header["shapes"], records):
        (arr,) = container.unpack_arrays(rec, [tuple(shape)])
        out[name] = arr
    return out, header.get("meta", {})
