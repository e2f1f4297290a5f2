"""Run configuration: every tunable of a collect/train/eval/attack run.

Stored in the same ``key = value`` format as scenario packs, with dotted keys
for nested sections (``weights.lambda_red = 0.5``). A file only needs the keys
it changes; everything else keeps its default.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields, is_dataclass, replace
from pathlib import Path
from typing import Any

from .control import PidParams
from .expert import ExpertConfig
from .kvfile import KVFormatError, dump_kv, parse_kv
from .losses import LossWeights, PenaltyParams
from .model import ModelConfig
from .townsim.scenario import DEFAULT_PACK_PATH

HEADER = "penaltydrive/1"
PRESET_DIR = Path(__file__).resolve().parent / "presets"


class ConfigError(ValueError):
    """Invalid config; the message names the offending field."""


@dataclass(frozen=True)
class DataConfig:
    routes: int = 40            # random training routes on the pack's town
    route_seed: int = 123
    sim_seed: int = 0


@dataclass(frozen=True)
class OptimConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 3e-4


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.01
    dot_count: int = 9
    dot_radius: float = 5.0
    dot_steps: int = 30
    dot_lr: float = 0.05
    dot_batch: int = 64
    dot_routes: int = 10        # held-out routes whose frames train the dot pattern
    dot_route_seed: int = 777


@dataclass(frozen=True)
class RunConfig:
    name: str = "full"
    pack: str = "standard"      # bundled pack name or a path to a .town file
    out: str = "runs"
    seed: int = 0
    seeds: tuple[int, ...] = (0, 1, 2)
    eval_seed: int = 0
    workers: int = 1
    data: DataConfig = DataConfig()
    expert: ExpertConfig = ExpertConfig()
    model: ModelConfig = ModelConfig()
    weights: LossWeights = LossWeights()
    penalty: PenaltyParams = PenaltyParams()
    optim: OptimConfig = OptimConfig()
    pid: PidParams = PidParams()
    attack: AttackConfig = AttackConfig()

    def validate(self) -> "RunConfig":
        checks = [
            ("seeds", len(self.seeds) > 0, "at least one seed is required"),
            ("workers", self.workers >= 1, "must be >= 1"),
            ("data.routes", self.data.routes >= 1, "must be >= 1"),
            ("optim.epochs", self.optim.epochs >= 1, "must be >= 1"),
            ("optim.batch_size", self.optim.batch_size >= 2, "must be >= 2 (the alignment loss contrasts pairs)"),
            ("optim.lr", self.optim.lr > 0, "must be positive"),
            ("attack.epsilon", self.attack.epsilon >= 0, "must be >= 0"),
            ("attack.dot_count", math.isqrt(self.attack.dot_count) ** 2 == self.attack.dot_count,
             "must be a square number"),
            ("penalty.dt", self.penalty.dt > 0, "must be positive"),
        ]
        for name in ("eta_front", "eta_td", "eta_light", "eta_stop", "eta_align",
                     "lambda_red", "lambda_speed", "lambda_stop"):
            checks.append((f"weights.{name}", getattr(self.weights, name) >= 0, "must be >= 0"))
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(f"{key}: {msg}")
        return self


DEFAULT_RUN = RunConfig()


# ------------------------------------------------------------ serialisation


def _fmt(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return " ".join(_fmt(v) for v in value)
    return str(value)


def flatten(obj: Any, prefix: str = "") -> list[tuple[str, str]]:
    out = []
    for f in fields(obj):
        value = getattr(obj, f.name)
        key = prefix + f.name
        if is_dataclass(value):
            out.extend(flatten(value, key + "."))
        else:
            out.append((key, _fmt(value)))
    return out


def _scalar(text: str, like: Any, key: str) -> Any:
    try:
        if isinstance(like, bool):
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError(f"expected true or false, got {text!r}")
            return low == "true"
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None
    return text


def _coerce(text: str, default: Any, key: str) -> Any:
    if isinstance(default, tuple):
        items = text.split()
        like = default[0] if default else 0.0
        return tuple(_scalar(t, like, key) for t in items)
    if default is None:
        # Only optional tuples of floats default to None (waypoint weights).
        return None if text.lower() == "none" else tuple(_scalar(t, 0.0, key) for t in text.split())
    return _scalar(text, default, key)


def _set(obj: Any, path: list[str], text: str, key: str) -> Any:
    names = {f.name for f in fields(obj)}
    head = path[0]
    if head not in names:
        raise ConfigError(f"{key}: unknown field")
    current = getattr(obj, head)
    if len(path) > 1:
        if not is_dataclass(current):
            raise ConfigError(f"{key}: {head} has no sub-fields")
        new = _set(current, path[1:], text, key)
    else:
        if is_dataclass(current):
            raise ConfigError(f"{key}: is a section, set one of its fields")
        new = _coerce(text, current, key)
    try:
        return replace(obj, **{head: new})
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{key}: {exc}") from None


def apply_entries(cfg: RunConfig, entries: list[tuple[str, str]]) -> RunConfig:
    for key, text in entries:
        cfg = _set(cfg, key.split("."), text, key)
    return cfg


def parse_config(text: str, base: RunConfig = DEFAULT_RUN) -> RunConfig:
    try:
        entries = parse_kv(text, HEADER)
    except KVFormatError as exc:
        raise ConfigError(str(exc)) from None
    return apply_entries(base, entries).validate()


def dumps_config(cfg: RunConfig) -> str:
    return dump_kv(flatten(cfg), HEADER)


def resolve_config_path(name_or_path: str) -> Path:
    """A file path, or the name of a shipped preset (``full``, ``no_penalty``, ...)."""
    p = Path(name_or_path)
    if p.exists():
        return p
    preset = PRESET_DIR / f"{name_or_path}.cfg"
    if preset.exists():
        return preset
    raise ConfigError(f"config: no file or preset named {name_or_path!r}")


def load_config(name_or_path: str | None) -> RunConfig:
    if name_or_path is None:
        return DEFAULT_RUN
    path = resolve_config_path(name_or_path)
    return parse_config(path.read_text())


def apply_preset(base: RunConfig, name_or_path: str) -> RunConfig:
    """Overlay a preset (or any config file) on ``base``; only the keys it lists change."""
    return parse_config(resolve_config_path(name_or_path).read_text(), base=base)


def pack_path(cfg: RunConfig) -> Path:
    if cfg.pack == "standard":
        return DEFAULT_PACK_PATH
    p = Path(cfg.pack)
    if not p.exists():
        raise ConfigError(f"pack: file not found: {cfg.pack}")
    return p


def list_presets() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.cfg"))


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    return dataclasses.replace(cfg, seed=seed)
