"""Command-line driver: ``stylemix {gen-data,train,lodo,ablate,analyze}``.

Exit codes: 0 success, 1 bad usage, 2 invalid configuration, 3 runtime failure.
Every run writes ``manifest.json`` before any work starts; passing that file
back through ``--config`` repeats the run exactly.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .analysis import collect_style_stats, project_and_score, write_coordinates
from .config import ConfigError, ExperimentConfig, load_config
from .data import SPLIT_TEST, SPLIT_VAL, save_dataset
from .nets import save_checkpoint
from .trainer import DivergenceError, accuracy, dataset_for, run_ablation, run_lodo, train

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
COMMANDS = ("gen-data", "train", "lodo", "ablate", "analyze")

log = logging.getLogger("stylemix")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stylemix", description="MixStyle experiments on a synthetic multi-domain benchmark.")
    parser.add_argument("--version", action="version", version=f"stylemix {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config or a previous run's manifest.json")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--out", help="output directory (default: $STYLEMIX_OUT/<command>)")
        seeds = p.add_mutually_exclusive_group()
        seeds.add_argument("--seed", type=int)
        seeds.add_argument("--seeds", type=_seed_list)
        p.add_argument("--jobs", type=int, default=1, help="parallel training runs")
        p.add_argument("--quiet", action="store_true")
        if name in ("train", "analyze"):
            p.add_argument("--target", type=int, help="held-out domain (default: train on all)")
    return parser


def _seed_list(text: str) -> List[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _resolve_seeds(args, cfg: ExperimentConfig, doc: dict) -> List[int]:
    if args.seeds is not None:
        return args.seeds
    if args.seed is not None:
        return [args.seed]
    if "seeds" in doc:
        return [int(s) for s in doc["seeds"]]
    return [cfg.seed]


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get("STYLEMIX_OUT", "runs")) / args.command


class Run:
    """Output directory plus its manifest, rewritten as artifacts appear."""

    def __init__(self, out: Path, command: str, cfg: ExperimentConfig, seeds: List[int], extra: dict):
        self.out = out
        self.path = out / "manifest.json"
        self.doc = {
            "tool": "stylemix",
            "version": __version__,
            "command": command,
            "resolved_config": cfg.to_dict(),
            "seeds": seeds,
            **extra,
            "artifacts": [],
            "started": _now(),
            "finished": None,
        }
        out.mkdir(parents=True, exist_ok=True)
        self.flush()

    def add(self, *paths) -> None:
        for p in paths:
            self.doc["artifacts"].append(Path(p).relative_to(self.out).as_posix())

    def finish(self) -> None:
        self.doc["finished"] = _now()
        self.flush()

    def flush(self) -> None:
        self.path.write_text(json.dumps(self.doc, indent=2) + "\n")


def _write_report(run: Run, report) -> None:
    run.add(report.write_csv(run.out / "report.csv"), report.write_json(run.out / "report.json"))
    run.add(*report.write_curves(run.out / "curves"))
    print(report.table())


def cmd_gen_data(args, cfg, seeds, doc) -> int:
    run = Run(_out_dir(args), args.command, cfg, seeds, {})
    ds = dataset_for(cfg)
    path, sidecar = save_dataset(ds, run.out / "dataset.bin")
    run.add(path, sidecar)
    run.finish()
    print(f"wrote {len(ds)} images to {path}")
    return EXIT_OK


def _target(args, doc, ds) -> Optional[int]:
    target = args.target if args.target is not None else doc.get("target")
    if target is not None and not 0 <= target < ds.num_domains:
        raise ConfigError("target", f"must lie in [0, {ds.num_domains})")
    return target


def cmd_train(args, cfg, seeds, doc) -> int:
    ds = dataset_for(cfg)
    target = _target(args, doc, ds)
    run = Run(_out_dir(args), args.command, cfg, seeds, {"target": target})
    sources = [d for d in range(ds.num_domains) if d != target]
    rows = []
    (run.out / "curves").mkdir(exist_ok=True)
    for seed in seeds:
        res = train(cfg, ds, sources, seed, target)
        ckpt = save_checkpoint(res.model, run.out / f"model_s{seed}.ckpt")
        curve = run.out / "curves" / f"train_s{seed}.csv"
        with open(curve, "w") as fh:
            fh.write("epoch,train_loss,val_acc\n")
            for r in res.curve:
                fh.write(f"{r['epoch']},{r['train_loss']!r},{r['val_acc']!r}\n")
        test = accuracy(res.model, ds, ds.indices([target], SPLIT_TEST)) if target is not None else float("nan")
        rows.append({"seed": seed, "source_val_accuracy": res.curve[-1]["val_acc"], "target_accuracy": test,
                     "activation": {k: v[0] / max(1, v[1]) for k, v in res.gate_counts.items()}})
        run.add(ckpt, curve)
        print(f"seed {seed}: source val {rows[-1]['source_val_accuracy']:.2f}  target {test:.2f}")
    with open(run.out / "report.csv", "w") as fh:
        fh.write("seed,source_val_accuracy,target_accuracy\n")
        for r in rows:
            fh.write(f"{r['seed']},{r['source_val_accuracy']!r},{r['target_accuracy']!r}\n")
    (run.out / "report.json").write_text(json.dumps({"target": target, "runs": rows}, indent=2))
    run.add(run.out / "report.csv", run.out / "report.json")
    run.finish()
    return EXIT_OK


def cmd_lodo(args, cfg, seeds, doc) -> int:
    run = Run(_out_dir(args), args.command, cfg, seeds, {})
    report = run_lodo(cfg, seeds, jobs=args.jobs)
    _write_report(run, report)
    run.finish()
    return EXIT_OK


def cmd_ablate(args, cfg, seeds, doc) -> int:
    run = Run(_out_dir(args), args.command, cfg, seeds, {"kind": cfg.kind})
    report = run_ablation(cfg.kind, cfg, seeds, jobs=args.jobs)
    _write_report(run, report)
    run.finish()
    return EXIT_OK


def cmd_analyze(args, cfg, seeds, doc) -> int:
    """Train one model per seed, then score the style statistics of each layer."""
    ds = dataset_for(cfg)
    target = _target(args, doc, ds)
    run = Run(_out_dir(args), args.command, cfg, seeds, {"target": target})
    sources = [d for d in range(ds.num_domains) if d != target]
    stats_dir = run.out / "stats"
    stats_dir.mkdir(exist_ok=True)
    idx = ds.indices(sources, SPLIT_VAL)
    if idx.size > cfg.analysis.max_points:
        idx = idx[np.linspace(0, idx.size - 1, cfg.analysis.max_points).astype(int)]
    rows, summary = [], {}
    for seed in seeds:
        model = train(cfg, ds, sources, seed, target).model
        for layer in cfg.analysis_layers():
            emb = collect_style_stats(model, ds, layer, idx)
            coords, dom, cls = project_and_score(emb)
            run.add(write_coordinates(stats_dir / f"{layer}_s{seed}.csv", coords, emb))
            rows.append((seed, layer, dom, cls))
            summary.setdefault(layer, []).append({"seed": seed, "domain_silhouette": dom, "class_silhouette": cls})
            print(f"seed {seed} {layer}: domain silhouette {dom:+.3f}  class silhouette {cls:+.3f}")
    with open(run.out / "report.csv", "w") as fh:
        fh.write("seed,layer,domain_silhouette,class_silhouette\n")
        for seed, layer, dom, cls in rows:
            fh.write(f"{seed},{layer},{dom!r},{cls!r}\n")
    (run.out / "report.json").write_text(json.dumps({"target": target, "layers": summary}, indent=2))
    run.add(run.out / "report.csv", run.out / "report.json")
    run.finish()
    return EXIT_OK


HANDLERS = {"gen-data": cmd_gen_data, "train": cmd_train, "lodo": cmd_lodo, "ablate": cmd_ablate, "analyze": cmd_analyze}


def run(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("jobs", "must be >= 1")
        cfg, doc = load_config(args.config, args.overrides)
        seeds = _resolve_seeds(args, cfg, doc)
        return HANDLERS[args.command](args, cfg, seeds, doc)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        print(f"invalid configuration: config file is not JSON ({exc})", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
