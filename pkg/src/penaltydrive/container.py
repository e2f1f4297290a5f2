"""Self-describing little-endian binary container shared by every on-disk artifact.

Layout::

    magic        4 bytes   (b"PCSG" episodes, b"PCKP" checkpoints, b"PDOT" dot patterns)
    version      u16
    header_len   u32
    header       header_len bytes, UTF-8 JSON (sorted keys)
    n_records    u32
    n_records x  (record_len u32, record bytes)
    crc32        u32 over every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Any

import numpy as np


class ContainerError(Exception):
    """Base class for unreadable container files."""


class BadMagicError(ContainerError):
    pass


class VersionMismatchError(ContainerError):
    pass


class TruncatedFileError(ContainerError):
    pass


class ChecksumError(ContainerError):
    pass


_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")


def encode(magic: bytes, version: int, header: dict[str, Any], records: list[bytes]) -> bytes:
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [magic, _U16.pack(version), _U32.pack(len(head)), head, _U32.pack(len(records))]
    for rec in records:
        parts.append(_U32.pack(len(rec)))
        parts.append(rec)
    body = b"".join(parts)
    return body + _U32.pack(zlib.crc32(body) & 0xFFFFFFFF)


def decode(blob: bytes, magic: bytes, version: int) -> tuple[dict[str, Any], list[bytes]]:
    if len(blob) < 4 or blob[:4] != magic:
        raise BadMagicError(f"expected magic {magic!r}, found {blob[:4]!r}")
    pos = 4

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob) - 4:
            raise TruncatedFileError(f"file ends before byte {pos + n} (size {len(blob)})")
        out = blob[pos:pos + n]
        pos += n
        return out

    (found,) = _U16.unpack(take(2))
    if found != version:
        raise VersionMismatchError(f"format version {found}, this reader supports {version}")
    (hlen,) = _U32.unpack(take(4))
    head_bytes = take(hlen)
    (count,) = _U32.unpack(take(4))
    records = []
    for _ in range(count):
        (n,) = _U32.unpack(take(4))
        records.append(take(n))
    if pos != len(blob) - 4:
        raise ChecksumError(f"{len(blob) - 4 - pos} unexpected trailing bytes")
    (crc,) = _U32.unpack(blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != crc:
        raise ChecksumError("crc32 mismatch")
    try:
        header = json.loads(head_bytes.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:  # pragma: no cover - crc guards this
        raise ChecksumError(f"header unreadable: {exc}") from exc
    return header, records


def write(path: str | Path, magic: bytes, version: int, header: dict[str, Any], records: list[bytes]) -> None:
    Path(path).write_bytes(encode(magic, version, header, records))


def read(path: str | Path, magic: bytes, version: int) -> tuple[dict[str, Any], list[bytes]]:
    return decode(Path(path).read_bytes(), magic, version)


def pack_arrays(arrays: list[np.ndarray]) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)


def unpack_arrays(buf: bytes, shapes: list[tuple[int, ...]]) -> list[np.ndarray]:
    sizes = [int(np.prod(s)) for s in shapes]
    if sum(sizes) * 8 != len(buf):
        raise TruncatedFileError(f"record holds {len(buf)} bytes, shapes need {sum(sizes) * 8}")
    flat = np.frombuffer(buf, dtype="<f8").astype(np.float64)
    out, pos = [], 0
    for s, n in zip(shapes, sizes):
        out.append(flat[pos:pos + n].reshape(s))
        pos += n
    return out
