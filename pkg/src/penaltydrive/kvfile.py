"""Line-oriented ``key = value`` text format used for scenario packs and run configs.

The first non-blank line is a version header such as ``townsim/1``. ``#``
starts a comment. Keys may repeat; order is preserved.
"""

from __future__ import annotations

from pathlib import Path


class KVFormatError(ValueError):
    pass


def parse_kv(text: str, header: str) -> list[tuple[str, str]]:
    lines = text.splitlines()
    entries: list[tuple[str, str]] = []
    seen_header = False
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if not seen_header:
            if line != header:
                raise KVFormatError(f"line {lineno}: expected header {header!r}, found {line!r}")
            seen_header = True
            continue
        if "=" not in line:
            raise KVFormatError(f"line {lineno}: expected 'key = value', found {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise KVFormatError(f"line {lineno}: empty key")
        entries.append((key, value.strip()))
    if not seen_header:
        raise KVFormatError(f"missing header {header!r}")
    return entries


def read_kv(path: str | Path, header: str) -> list[tuple[str, str]]:
    return parse_kv(Path(path).read_text(), header)


def dump_kv(entries: list[tuple[str, str]], header: str) -> str:
    return "\n".join([header] + [f"{k} = {v}" for k, v in entries]) + "\n"


def parse_options(value: str) -> tuple[list[str], dict[str, str]]:
    """Split ``a b key=val key2=val2`` into positional tokens and options.

    An option whose value is the rest of the line (``points=...``) must come last.
    """
    positional: list[str] = []
    opts: dict[str, str] = {}
    tokens = value.split()
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if "=" in tok:
            k, v = tok.split("=", 1)
            if k in ("points", "path"):
                opts[k] = " ".join([v] + tokens[i + 1:]).strip()
                break
            opts[k] = v
        else:
            positional.append(tok)
        i += 1
    return positional, opts


def parse_points(value: str) -> list[tuple[float, float]]:
    """``x y ; x y ; ...`` -> list of points."""
    pts = []
    for chunk in value.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split()
        if len(parts) != 2:
            raise KVFormatError(f"bad point {chunk!r}")
        pts.append((float(parts[0]), float(parts[1])))
    return pts
