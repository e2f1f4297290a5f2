"""Closed-loop evaluation of a trained policy on a scenario pack."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .control import PidParams, PidState, pid_control
from .expert import observe
from .metrics import (InfractionCounts, RouteResult, driving_score, infraction_score, mean_infraction_score,
                      mean_std, route_completion)
from .model import DrivingModel
from .sensors import DEFAULT_SENSORS, SensorConfig
from .townsim.scenario import ScenarioConfig
from .townsim.sim import SimState, step

# Hook signature: (camera, state, observation) -> attacked camera.
CameraAttack = Callable[[np.ndarray, SimState, dict], np.ndarray]

COMPLETION_SLACK = 1.0   # metres from the route end that count as finished


@dataclass
class RouteRun:
    result: RouteResult
    events: list = field(default_factory=list)
    steps: int = 0


def run_route(model: DrivingModel, scenario: ScenarioConfig, pid: PidParams = PidParams(),
              seed: int = 0, attack: CameraAttack | None = None,
              sensors: SensorConfig = DEFAULT_SENSORS) -> RouteRun:
    state = scenario.initial_state(seed)
    pid_state = PidState()
    events = []
    end = scenario.route.length - COMPLETION_SLACK
    n = 0
    while state.time - scenario.start_time < scenario.time_limit - 1e-9 and state.progress_s < end:
        obs = observe(state, sensors, scenario.dt)
        cam = obs["camera"]
        if attack is not None:
            cam = attack(cam, state, obs)
        wps = model.predict(cam[None], obs["lidar"][None], obs["meas"][None], obs["goal"][None])[0]
        controls, pid_state = pid_control(wps, state.ego.speed, pid_state, pid)
        state, ev = step(state, controls, scenario.dt, scenario.index)
        events.extend(ev)
        n += 1
    completion = 1.0 if state.progress_s >= end else state.progress_s / scenario.route.length
    result = RouteResult(min(1.0, completion), InfractionCounts.from_events(events), scenario.name)
    return RouteRun(result, events, n)


def evaluate(model: DrivingModel, scenarios: Sequence[ScenarioConfig], pid: PidParams = PidParams(),
             seed: int = 0, attack: CameraAttack | None = None) -> list[RouteResult]:
    return [run_route(model, sc, pid, seed, attack).result for sc in scenarios]


def summarize(results: Sequence[RouteResult]) -> dict:
    return {"driving_score": driving_score(results), "route_completion": route_completion(results),
            "infraction_score": mean_infraction_score(results),
            "n_red": sum(r.counts.n_red for r in results), "n_stop": sum(r.counts.n_stop for r in results),
            "n_collisions": sum(r.counts.n_veh + r.counts.n_stat + r.counts.n_ped for r in results)}


def build_report(runs: dict[str, Sequence[RouteResult]], label: str = "") -> dict:
    """Per-route records plus an aggregate block with mean and sample std over runs.

    ``runs`` maps a run key (usually the seed) to that run's route results.
    """
    routes = []
    per_run = {}
    for key in sorted(runs):
        res = runs[key]
        for r in res:
            routes.append({"run": key, "route": r.name, "completion": r.completion,
                           "counts": r.counts.as_dict(), "infraction_score": infraction_score(r.counts)})
        per_run[key] = summarize(res)
    agg = {}
    for metric in ("driving_score", "route_completion", "infraction_score", "n_red", "n_stop", "n_collisions"):
        m, s = mean_std([per_run[k][metric] for k in sorted(per_run)])
        agg[metric] = {"mean": m, "std": s}
    return {"label": label, "routes": routes, "runs": per_run, "aggregate": agg}


def dumps_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def format_table(rows: dict[str, dict]) -> str:
    """Driving score / route completion / infraction score as ``mean ± std``."""
    head = f"{'Model':<24} {'Driving score':>18} {'Route compl.':>18} {'Infrac. score':>16}"
    lines = [head, "-" * len(head)]
    for name, rep in rows.items():
        a = rep["aggregate"]
        ds, rc, is_ = a["driving_score"], a["route_completion"], a["infraction_score"]
        lines.append(f"{name:<24} {ds['mean']:>9.2f} ± {ds['std']:<6.2f} {rc['mean']:>9.2f} ± {rc['std']:<6.2f}"
                     f" {is_['mean']:>7.2f} ± {is_['std']:<5.2f}")
    return "\n".join(lines)
