"""Collect / train / evaluate / attack steps shared by the CLI and the toy benchmark."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .attacks import DotPattern, dot_attack_train, fgsm_hook
from .config import RunConfig, pack_path
from .dataset import Frame, FrameStore, read_episode_with_header, write_episode
from .evaluate import CameraAttack, build_report, evaluate
from .expert import Episode, collect_episode
from .metrics import InfractionCounts, RouteResult
from .model import DrivingModel
from .train import TrainConfig, train
from .townsim import ScenarioPack, load_pack, random_routes

log = logging.getLogger(__name__)


class DataError(RuntimeError):
    """Missing or unusable episode / checkpoint files."""


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    # Results come back in input order, so the pool size never changes them.
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ------------------------------------------------------------------ collect


def eval_pack(cfg: RunConfig) -> ScenarioPack:
    return load_pack(pack_path(cfg))


def training_routes(cfg: RunConfig) -> ScenarioPack:
    """Random routes on the evaluation town; the evaluation routes themselves are never trained on."""
    return random_routes(eval_pack(cfg), cfg.data.routes, seed=cfg.data.route_seed)


@dataclass
class _CollectJob:
    scenario: object
    cfg: RunConfig

    def __call__(self) -> Episode:
        return collect_episode(self.scenario, self.cfg.expert, seed=self.cfg.data.sim_seed)


def _run_job(job):
    return job()


def collect_episodes(cfg: RunConfig, pack: ScenarioPack | None = None) -> list[Episode]:
    pack = pack if pack is not None else training_routes(cfg)
    return _map(_run_job, [_CollectJob(sc, cfg) for sc in pack.scenarios], cfg.workers)


def collection_summary(episodes: Sequence[Episode]) -> dict:
    kept = [e for e in episodes if not e.rejected]
    counts = InfractionCounts()
    for e in episodes:
        counts = counts + InfractionCounts.from_events(e.events)
    return {"episodes": len(episodes), "kept": len(kept), "rejected": len(episodes) - len(kept),
            "frames": sum(len(e.frames) for e in kept), "infractions": counts.as_dict(),
            "mean_progress": float(np.mean([e.progress for e in episodes])) if episodes else 0.0,
            "per_episode": [{"scenario": e.scenario, "rejected": e.rejected, "frames": len(e.frames),
                             "progress": e.progress,
                             "infractions": InfractionCounts.from_events(e.events).as_dict()}
                            for e in episodes]}


def write_episodes(episodes: Sequence[Episode], directory: Path) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, e in enumerate(episodes):
        if e.rejected or not e.frames:
            continue
        p = directory / f"ep_{i:04d}.pcsg"
        write_episode(p, e.frames, {"scenario": e.scenario, "expert": e.expert_digest,
                                    "progress": e.progress, "n_steps": e.n_steps})
        paths.append(p)
    return paths


def read_frames(directory: Path) -> list[Frame]:
    paths = sorted(Path(directory).glob("ep_*.pcsg"))
    if not paths:
        raise DataError(f"no episode files (ep_*.pcsg) in {directory}")
    frames: list[Frame] = []
    for p in paths:
        fr, _ = read_episode_with_header(p)
        frames.extend(fr)
    if not frames:
        raise DataError(f"episode files in {directory} hold no frames")
    return frames


def frames_of(episodes: Sequence[Episode]) -> list[Frame]:
    return [f for e in episodes if not e.rejected for f in e.frames]


# -------------------------------------------------------------------- train


def train_model(cfg: RunConfig, store: FrameStore, seed: int,
                on_step: Callable[[str], None] | None = None) -> tuple[DrivingModel, list[dict]]:
    model = DrivingModel(cfg.model, seed=seed)
    tcfg = TrainConfig(epochs=cfg.optim.epochs, batch_size=cfg.optim.batch_size, lr=cfg.optim.lr, seed=seed)
    t0 = time.time()
    history = train(model, store, cfg.weights, cfg.penalty, tcfg, on_step=on_step)
    log.info("trained seed %d in %.0f s (%d steps)", seed, time.time() - t0, len(history))
    return model, history


# --------------------------------------------------------------------- eval


@dataclass
class _EvalJob:
    model: DrivingModel
    scenario: object
    cfg: RunConfig
    attack: CameraAttack | None

    def __call__(self) -> RouteResult:
        return evaluate(self.model, [self.scenario], self.cfg.pid, self.cfg.eval_seed, self.attack)[0]


def evaluate_model(cfg: RunConfig, model: DrivingModel, attack: CameraAttack | None = None,
                   pack: ScenarioPack | None = None) -> list[RouteResult]:
    pack = pack if pack is not None else eval_pack(cfg)
    jobs = [_EvalJob(model, sc, cfg, attack) for sc in pack.scenarios]
    return _map(_run_job, jobs, cfg.workers)


def evaluate_models(cfg: RunConfig, models: dict[str, DrivingModel],
                    attacks: dict[str, CameraAttack] | None = None, label: str = "") -> dict:
    """Report over several models (usually one per training seed), each with its own optional attack."""
    runs = {}
    for key, model in models.items():
        runs[key] = evaluate_model(cfg, model, (attacks or {}).get(key))
    return build_report(runs, label=label)


def load_models(paths: Sequence[Path]) -> dict[str, DrivingModel]:
    out = {}
    for p in paths:
        p = Path(p)
        if not p.exists():
            raise DataError(f"checkpoint not found: {p}")
        out[p.stem] = DrivingModel.load(p)
    return out


# ------------------------------------------------------------------- attack


def fgsm_attack(cfg: RunConfig, model: DrivingModel, eps: float | None = None) -> CameraAttack:
    eps = cfg.attack.epsilon if eps is None else eps
    return fgsm_hook(model, eps, cfg.expert, cfg.penalty.dt, cfg.weights, cfg.penalty)


def attack_frames(cfg: RunConfig) -> list[Frame]:
    """Frames from held-out expert routes; the dot pattern is fitted on these."""
    pack = random_routes(eval_pack(cfg), cfg.attack.dot_routes, seed=cfg.attack.dot_route_seed, prefix="atk")
    sub = replace(cfg, data=replace(cfg.data, routes=cfg.attack.dot_routes))
    return frames_of(collect_episodes(sub, pack))


def train_dot_pattern(cfg: RunConfig, model: DrivingModel, frames: Sequence[Frame], seed: int) -> DotPattern:
    res = dot_attack_train(model, frames, n_dots=cfg.attack.dot_count, steps=cfg.attack.dot_steps,
                           lr=cfg.attack.dot_lr, batch_size=cfg.attack.dot_batch, seed=seed,
                           radius=cfg.attack.dot_radius, weights=cfg.weights, params=cfg.penalty)
    log.info("dot pattern: best attack loss %.4f over %d steps%s", res.best_loss, len(res.history),
             " (diverged)" if res.diverged else "")
    return res.pattern

