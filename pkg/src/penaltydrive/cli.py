"""Command line entry point: collect, train, eval, attack, score, ablate.

Every command writes the fully resolved config it ran with into the output
directory (``<command>.cfg``), so ``--config OUT/<command>.cfg`` repeats it.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import pipeline
from .attacks import dot_hook, load_pattern, save_pattern
from .config import ConfigError, RunConfig, apply_preset, dumps_config, list_presets, load_config
from .container import ContainerError
from .dataset import FrameStore
from .evaluate import build_report, dumps_report, format_table
from .kvfile import KVFormatError
from .losses import NumericalError
from .metrics import InfractionCounts, RouteResult

log = logging.getLogger("penaltydrive")

EXIT_OK = 0
EXIT_USAGE = 2      # argparse's own code
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_NUMERIC = 5

TABLE_PRESETS = ("full", "no_csg", "no_penalty", "red_0.7", "red_0.3", "speed_0.07", "speed_0.03",
                 "stop_0.7", "stop_0.3")


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, seeds=(args.seed,))
    if getattr(args, "epsilon", None) is not None:
        cfg = replace(cfg, attack=replace(cfg.attack, epsilon=args.epsilon))
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    return cfg.validate()


def _outdir(cfg: RunConfig, command: str) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{command}.cfg").write_text(dumps_config(cfg))
    return out


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _checkpoints(cfg: RunConfig, given: Sequence[str] | None) -> list[Path]:
    if given:
        return [Path(p) for p in given]
    return [Path(cfg.out) / f"model_seed{s}.ckpt" for s in cfg.seeds]


# ----------------------------------------------------------------- commands


def cmd_collect(cfg: RunConfig) -> dict:
    out = _outdir(cfg, "collect")
    episodes = pipeline.collect_episodes(cfg)
    pipeline.write_episodes(episodes, out / "episodes")
    summary = pipeline.collection_summary(episodes)
    _write_json(out / "collection.json", summary)
    print(f"collected {summary['kept']} episodes ({summary['rejected']} rejected), "
          f"{summary['frames']} frames -> {out / 'episodes'}")
    return summary


def cmd_train(cfg: RunConfig, data: str | None = None) -> list[Path]:
    out = _outdir(cfg, "train")
    store = FrameStore(pipeline.read_frames(Path(data) if data else out / "episodes"))
    paths = []
    for seed in cfg.seeds:
        log_path = out / f"train_seed{seed}.log"
        with log_path.open("w") as fh:
            model, history = pipeline.train_model(cfg, store, seed, on_step=lambda line: fh.write(line + "\n"))
        ckpt = out / f"model_seed{seed}.ckpt"
        model.save(ckpt, {"seed": seed, "config": cfg.name, "steps": len(history)})
        paths.append(ckpt)
        print(f"seed {seed}: {len(history)} steps, final total loss {history[-1]['total']:.4f} -> {ckpt}")
    return paths


def cmd_eval(cfg: RunConfig, checkpoints: Sequence[str] | None = None, report_name: str = "eval.json") -> dict:
    out = _outdir(cfg, "eval")
    models = pipeline.load_models(_checkpoints(cfg, checkpoints))
    report = pipeline.evaluate_models(cfg, models, label=cfg.name)
    (out / report_name).write_text(dumps_report(report))
    print(format_table({cfg.name: report}))
    return report


def cmd_attack(cfg: RunConfig, kind: str, checkpoints: Sequence[str] | None = None) -> dict:
    out = _outdir(cfg, f"attack_{kind}")
    models = pipeline.load_models(_checkpoints(cfg, checkpoints))
    if kind == "fgsm":
        attacks = {k: pipeline.fgsm_attack(cfg, m) for k, m in models.items()}
        label = f"{cfg.name} fgsm eps={cfg.attack.epsilon:g}"
    elif kind == "dot":
        frames = pipeline.attack_frames(cfg)
        attacks = {}
        for i, (key, model) in enumerate(models.items()):
            path = out / f"dots_{key}.pdot"
            pattern = pipeline.train_dot_pattern(cfg, model, frames, seed=cfg.seed + i)
            save_pattern(path, pattern, {"checkpoint": key})
            attacks[key] = dot_hook(load_pattern(path))
        label = f"{cfg.name} dot"
    else:
        raise ConfigError(f"kind: expected fgsm or dot, got {kind!r}")
    report = pipeline.evaluate_models(cfg, models, attacks, label=label)
    (out / f"attack_{kind}.json").write_text(dumps_report(report))
    print(format_table({label: report}))
    return report


def cmd_score(paths: Sequence[str]) -> str:
    """Table from report files; aggregates are recomputed from the per-route records."""
    rows = {}
    for p in paths:
        path = Path(p)
        if not path.exists():
            raise pipeline.DataError(f"results file not found: {p}")
        try:
            rep = json.loads(path.read_text())
            runs: dict[str, list[RouteResult]] = {}
            for r in rep["routes"]:
                res = RouteResult(float(r["completion"]), InfractionCounts(**r["counts"]), r.get("route", ""))
                runs.setdefault(str(r.get("run", "0")), []).append(res)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise pipeline.DataError(f"{p}: not an evaluation report ({exc})") from None
        if not runs:
            raise pipeline.DataError(f"{p}: no route records")
        rows[rep.get("label") or path.stem] = build_report(runs, label=rep.get("label", ""))
    table = format_table(rows)
    print(table)
    return table


def cmd_ablate(cfg: RunConfig, presets: Sequence[str]) -> str:
    """One shared data set, then train and evaluate every preset on every seed."""
    out = _outdir(cfg, "ablate")
    data_dir = out / "episodes"
    if not any(data_dir.glob("ep_*.pcsg")):
        episodes = pipeline.collect_episodes(cfg)
        pipeline.write_episodes(episodes, data_dir)
        _write_json(out / "collection.json", pipeline.collection_summary(episodes))
    reports = {}
    for name in presets:
        pcfg = replace(apply_preset(cfg, name), out=str(out / name))
        cmd_train(pcfg, data=str(data_dir))
        reports[name] = cmd_eval(pcfg)
    table = format_table(reports)
    (out / "ablation.txt").write_text(table + "\n")
    print(table)
    return table


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file or preset name (" + ", ".join(list_presets()) + ")")
    common.add_argument("--seed", type=int, help="run only this seed")
    common.add_argument("--out", help="output directory (overrides the config's 'out')")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="penaltydrive", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("collect", parents=[common], help="run the expert and write episode files")
    t = sub.add_parser("train", parents=[common], help="train one model per seed")
    t.add_argument("--data", help="episode directory (default OUT/episodes)")
    e = sub.add_parser("eval", parents=[common], help="closed-loop evaluation on the scenario pack")
    e.add_argument("--checkpoint", action="append", help="checkpoint file; repeat for several seeds")
    a = sub.add_parser("attack", parents=[common], help="evaluation under a camera attack")
    a.add_argument("--kind", choices=("fgsm", "dot"), default="fgsm")
    a.add_argument("--epsilon", type=float, help="FGSM step size (default from config)")
    a.add_argument("--checkpoint", action="append")
    s = sub.add_parser("score", help="aggregate table from evaluation reports")
    s.add_argument("results", nargs="+")
    s.add_argument("-v", "--verbose", action="store_true")
    b = sub.add_parser("ablate", parents=[common], help="train and evaluate several presets on shared data")
    b.add_argument("--presets", nargs="+", default=list(TABLE_PRESETS))
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    t0 = time.time()
    try:
        if args.command == "score":
            cmd_score(args.results)
        else:
            cfg = _resolve(args)
            if args.command == "collect":
                cmd_collect(cfg)
            elif args.command == "train":
                cmd_train(cfg, args.data)
            elif args.command == "eval":
                cmd_eval(cfg, args.checkpoint)
            elif args.command == "attack":
                cmd_attack(cfg, args.kind, args.checkpoint)
            elif args.command == "ablate":
                cmd_ablate(cfg, args.presets)
    except (ConfigError, KVFormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (pipeline.DataError, ContainerError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    log.info("%s finished in %.1f s", args.command, time.time() - t0)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
