"""Toy penalty ablation: full model vs no penalty on identical data, several seeds.

Collects one expert data set, trains each preset once per seed with the same
data and epochs, and evaluates every model closed loop on the scenario pack.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

from . import pipeline
from .config import RunConfig, apply_preset
from .dataset import FrameStore
from .model import DrivingModel

log = logging.getLogger(__name__)


@dataclass
class AblationResult:
    reports: dict[str, dict]                     # preset -> evaluation report
    seconds: float
    collection: dict = field(default_factory=dict)
    models: dict[str, dict[str, DrivingModel]] = field(default_factory=dict)
    configs: dict[str, RunConfig] = field(default_factory=dict)

    def rule_infractions(self, preset: str) -> int:
        """Red-light plus stop-sign infractions summed over seeds and routes."""
        runs = self.reports[preset]["runs"].values()
        return sum(r["n_red"] + r["n_stop"] for r in runs)

    def mean_ds(self, preset: str) -> float:
        return self.reports[preset]["aggregate"]["driving_score"]["mean"]


def run_ablation(base: RunConfig, presets: Sequence[str] = ("full", "no_penalty"),
                 seeds: Sequence[int] | None = None) -> AblationResult:
    t0 = time.time()
    seeds = tuple(seeds) if seeds is not None else base.seeds
    episodes = pipeline.collect_episodes(base)
    store = FrameStore(pipeline.frames_of(episodes))
    log.info("collected %d frames in %.0f s", len(store), time.time() - t0)
    reports, all_models, configs = {}, {}, {}
    for name in presets:
        cfg = replace(apply_preset(base, name), seeds=seeds)
        models = {f"seed{s}": pipeline.train_model(cfg, store, s)[0] for s in seeds}
        reports[name] = pipeline.evaluate_models(cfg, models, label=name)
        all_models[name], configs[name] = models, cfg
        agg = reports[name]["aggregate"]
        log.info("%s: DS %.2f, red %s, stop %s", name, agg["driving_score"]["mean"],
                 [r["n_red"] for r in reports[name]["runs"].values()],
                 [r["n_stop"] for r in reports[name]["runs"].values()])
    return AblationResult(reports, time.time() - t0, pipeline.collection_summary(episodes), all_models, configs)
