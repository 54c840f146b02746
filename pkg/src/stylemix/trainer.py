"""Training loop plus the leave-one-domain-out and ablation protocols."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from . import layers
from .config import ExperimentConfig
from .data import SPLIT_TEST, SPLIT_TRAIN, SPLIT_VAL, DomainDataset, generate_dataset, load_dataset, sample_batch, sample_two_domain_batch
from .nets import Model, build_classifier, mask_from_code

log = logging.getLogger(__name__)

INSERTION_MASKS = ("none", "blk1", "blk12", "blk123", "blk1234", "blk14", "blk23")
ALPHA_SWEEP = (0.1, 0.2, 0.3, 0.5, 1.0)

# images are shifted to zero-centred [-0.5, 0.5] before the first conv
CENTER = 0.5
# per-run random streams, spawned from (seed, target)
_STREAM_INIT, _STREAM_BATCH, _STREAM_MIX, _STREAM_AUG = range(4)


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, step: int):
        self.epoch = epoch
        self.step = step
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch}, step {step}")


@dataclass
class TrainResult:
    model: Model
    curve: List[dict]
    gate_counts: Dict[str, Tuple[int, int]]  # block -> (activations, calls)
    sampled_indices: Optional[np.ndarray] = None


def dataset_for(cfg: ExperimentConfig) -> DomainDataset:
    if cfg.data.path:
        return load_dataset(cfg.data.path)
    d = cfg.data
    return generate_dataset(
        d.num_classes, d.num_domains, d.per_cell, d.height, d.width, d.channels, d.seed,
        style_jitter=d.style_jitter, pixel_noise=d.pixel_noise,
    )


def mixup_no_interp(images: np.ndarray, labels: np.ndarray, rng: np.random.Generator, weights=None, perm=None):
    """Pixel-level mixing with a uniform weight per instance; labels untouched."""
    B = images.shape[0]
    if B < 2:
        raise ValueError("mixup needs a batch of at least 2")
    w = rng.uniform(0.0, 1.0, B) if weights is None else np.broadcast_to(np.asarray(weights, dtype=np.float64), (B,))
    if perm is None:
        perm = rng.permutation(B)
    w = w.astype(images.dtype)[:, None, None, None]
    return w * images + (1 - w) * images[perm], labels.copy()


def _streams(seed: int, target: int) -> List[np.random.Generator]:
    children = np.random.SeedSequence([seed, target]).spawn(4)
    return [np.random.default_rng(c) for c in children]


def accuracy(model: Model, ds: DomainDataset, idx: np.ndarray) -> float:
    if idx.size == 0:
        return float("nan")
    images = ds.images[idx].astype(model.dtype) - model.dtype.type(CENTER)
    return 100.0 * float(np.mean(model.predict(images) == ds.class_labels[idx]))


def sgd_step(params, grads, velocity, lr: float, momentum: float, weight_decay: float, clip: float = 0.0) -> None:
    """Heavy-ball SGD with L2 folded into the gradient; updates in place.

    ``clip > 0`` rescales the loss gradient to at most that global L2 norm
    before weight decay is added.
    """
    factor = 1.0
    if clip > 0:
        norm = np.sqrt(sum(float(np.vdot(grads[p], grads[p])) for p in params))
        if norm > clip:
            factor = clip / norm
    for p, v in zip(params, velocity):
        g = factor * grads[p] + weight_decay * p.value
        v *= momentum
        v += g
        p.value = p.value - lr * v


def train(
    cfg: ExperimentConfig,
    ds: DomainDataset,
    sources: Sequence[int],
    seed: int,
    target: Optional[int] = None,
    log_indices: bool = False,
) -> TrainResult:
    """SGD with momentum and L2 weight decay on the training split of ``sources``."""
    dtype = np.dtype(cfg.precision)
    sources = sorted(int(s) for s in sources)
    pool = ds.indices(sources, SPLIT_TRAIN)
    val_idx = ds.indices(sources, SPLIT_VAL)
    opt = cfg.optimizer
    B = opt.batch_size
    if pool.size < B:
        raise ValueError(f"training pool has {pool.size} examples, fewer than the batch size {B}")

    init_rng, batch_rng, mix_rng, aug_rng = _streams(seed, ds.num_domains if target is None else target)
    model = build_classifier(cfg.classifier_config(), int(init_rng.integers(2**63)), dtype)
    params = list(model.params.values())
    velocity = [np.zeros_like(p.value) for p in params]
    sampler = cfg.resolved_sampler()
    steps = pool.size // B
    curve: List[dict] = []
    gates: Dict[str, List[int]] = {name: [0, 0] for name in model.cfg.insertion_mask}
    used: List[np.ndarray] = []

    for epoch in range(opt.epochs):
        losses = []
        for step in range(steps):
            if sampler == "two_domain":
                i, j = batch_rng.choice(sources, size=2, replace=False)
                images, labels, _, idx = sample_two_domain_batch(ds, int(i), int(j), B // 2, batch_rng, pool)
            else:
                images, labels, _, idx = sample_batch(ds, sampler, B, batch_rng, pool)
            if log_indices:
                used.append(idx)
            x = images.astype(dtype) - dtype.type(CENTER)
            if cfg.baseline == "mixup_no_interp":
                x, labels = mixup_no_interp(x, labels, aug_rng)
            trace: Dict[str, list] = {}
            logits = model.forward(x, training=True, rng=mix_rng, trace=trace)
            loss = layers.softmax_cross_entropy(logits, labels)
            if not np.isfinite(loss.value):
                raise DivergenceError(epoch, step)
            grads = ad.backward(loss, params)
            sgd_step(params, grads, velocity, opt.lr, opt.momentum, opt.weight_decay, opt.grad_clip)
            for name, events in trace.items():
                gates[name][0] += sum(e.activated for e in events)
                gates[name][1] += len(events)
            losses.append(float(loss.value))
        curve.append(
            {"epoch": epoch + 1, "train_loss": float(np.mean(losses)), "val_acc": accuracy(model, ds, val_idx)}
        )
    return TrainResult(
        model,
        curve,
        {k: (v[0], v[1]) for k, v in gates.items()},
        np.concatenate(used) if used else None,
    )


# --- reports ----------------------------------------------------------------


@dataclass
class RunRecord:
    arm: str
    target: int
    seed: int
    accuracy: float
    source_val_accuracy: float
    seconds: float
    gate_counts: Dict[str, Tuple[int, int]] = field(default_factory=dict)
    curve: List[dict] = field(default_factory=list)


@dataclass
class ExperimentReport:
    """Per-(arm, target, seed) test accuracies with aggregates."""

    records: List[RunRecord]
    config: dict
    targets: List[int]
    seeds: List[int]
    wall_clock: float = 0.0
    arm_order: List[str] = field(default_factory=list)

    @property
    def arms(self) -> List[str]:
        seen = list(self.arm_order)
        for r in self.records:
            if r.arm not in seen:
                seen.append(r.arm)
        return seen

    def accuracies(self, arm: str) -> np.ndarray:
        """(targets, seeds) accuracy matrix for ``arm``."""
        table = {(r.target, r.seed): r.accuracy for r in self.records if r.arm == arm}
        return np.array([[table[(t, s)] for s in self.seeds] for t in self.targets])

    def average(self, arm: str) -> float:
        """Mean over seeds of the per-seed average across target domains."""
        return float(self.accuracies(arm).mean())

    def seed_averages(self, arm: str) -> np.ndarray:
        return self.accuracies(arm).mean(axis=0)

    def summary(self, arm: str) -> dict:
        acc = self.accuracies(arm)
        per_seed = acc.mean(axis=0)
        n = len(self.seeds)
        out = {
            "per_target_mean": {str(t): float(acc[i].mean()) for i, t in enumerate(self.targets)},
            "per_target_std": {str(t): (float(acc[i].std(ddof=1)) if n >= 2 else None) for i, t in enumerate(self.targets)},
            "average": float(per_seed.mean()),
            "average_std": float(per_seed.std(ddof=1)) if n >= 2 else None,
        }
        gates = [r.gate_counts for r in self.records if r.arm == arm]
        if gates and gates[0]:
            out["activation_fraction"] = {
                k: sum(g[k][0] for g in gates) / max(1, sum(g[k][1] for g in gates)) for k in gates[0]
            }
        return out

    def to_json_dict(self) -> dict:
        return {
            "targets": self.targets,
            "seeds": self.seeds,
            "wall_clock_seconds": self.wall_clock,
            "arms": {arm: self.summary(arm) for arm in self.arms},
            "config": self.config,
        }

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["arm", "target", "seed", "accuracy", "source_val_accuracy"])
            for r in self.records:
                w.writerow([r.arm, r.target, r.seed, repr(r.accuracy), repr(r.source_val_accuracy)])
        return path

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json_dict(), indent=2))
        return path

    def write_curves(self, directory) -> List[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for r in self.records:
            p = directory / f"{r.arm}_t{r.target}_s{r.seed}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["epoch", "train_loss", "val_acc"])
                for row in r.curve:
                    w.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_acc"])])
            paths.append(p)
        return paths

    def table(self) -> str:
        head = ["arm"] + [f"t{t}" for t in self.targets] + ["avg"]
        lines = ["  ".join(f"{h:>14}" for h in head)]
        for arm in self.arms:
            acc = self.accuracies(arm)
            cells = [f"{arm:>14}"] + [f"{v:14.2f}" for v in acc.mean(axis=1)] + [f"{acc.mean():14.2f}"]
            lines.append("  ".join(cells))
        return "\n".join(lines)


# --- protocol ---------------------------------------------------------------

_WORKER_DS: Optional[DomainDataset] = None


def _init_worker(ds):
    global _WORKER_DS
    _WORKER_DS = ds


def _run_one(task) -> RunRecord:
    arm, cfg_dict, target, seed = task
    cfg = ExperimentConfig.from_dict(cfg_dict)
    ds = _WORKER_DS
    t0 = time.perf_counter()
    sources = [d for d in range(ds.num_domains) if d != target]
    res = train(cfg, ds, sources, seed, target)
    acc = accuracy(res.model, ds, ds.indices([target], SPLIT_TEST))
    val = res.curve[-1]["val_acc"] if res.curve else float("nan")
    return RunRecord(arm, target, seed, acc, val, time.perf_counter() - t0, res.gate_counts, res.curve)


def run_arms(
    arms: Dict[str, ExperimentConfig],
    seeds: Sequence[int],
    ds: Optional[DomainDataset] = None,
    jobs: int = 1,
    targets: Optional[Sequence[int]] = None,
    report_config: Optional[dict] = None,
) -> ExperimentReport:
    """Leave-one-domain-out runs for every (arm, target, seed), in parallel if ``jobs > 1``.

    All arms share one dataset, so comparisons are controlled.
    """
    if not arms:
        raise ValueError("no arms to run")
    first = next(iter(arms.values()))
    if ds is None:
        ds = dataset_for(first)
    if ds.num_domains < 3:
        raise ValueError("leave-one-domain-out needs at least 3 domains")
    targets = list(range(ds.num_domains)) if targets is None else [int(t) for t in targets]
    seeds = [int(s) for s in seeds]
    tasks = [(arm, cfg.to_dict(), t, s) for arm, cfg in arms.items() for t in targets for s in seeds]
    t0 = time.perf_counter()
    if jobs > 1:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(ds,)) as pool:
            records = list(pool.map(_run_one, tasks))
    else:
        _init_worker(ds)
        records = []
        for task in tasks:
            rec = _run_one(task)
            log.info("arm=%s target=%d seed=%d acc=%.2f (%.1fs)", rec.arm, rec.target, rec.seed, rec.accuracy, rec.seconds)
            records.append(rec)
    cfg_doc = report_config if report_config is not None else {a: c.to_dict() for a, c in arms.items()}
    return ExperimentReport(records, cfg_doc, targets, seeds, time.perf_counter() - t0, list(arms))


def run_lodo(
    cfg: ExperimentConfig,
    seeds: Sequence[int],
    ds: Optional[DomainDataset] = None,
    jobs: int = 1,
    arm: Optional[str] = None,
) -> ExperimentReport:
    """Hold out each domain in turn, train on the rest, test on the held-out test split."""
    return run_arms({arm or cfg.baseline: cfg}, seeds, ds, jobs, report_config=cfg.to_dict())


def ablation_arms(kind: str, cfg: ExperimentConfig) -> Dict[str, ExperimentConfig]:
    """The controlled arm set for one ablation, all derived from ``cfg``."""
    ms = cfg.override({"baseline": "mixstyle"})
    if kind == "insertion":
        arms = {}
        for code in INSERTION_MASKS:
            mask = list(mask_from_code(code))
            if len(cfg.model.blocks) < max((int(m[3:]) for m in mask), default=0):
                continue
            arms[code] = ms.override({"model.insertion_mask": mask}) if mask else cfg.override({"baseline": "vanilla"})
        return arms
    if kind == "mix_vs_replace":
        return {m: ms.override({"mixstyle.mix_mode": m}) for m in ("convex", "replace")}
    if kind == "shuffle_scope":
        return {s: ms.override({"mixstyle.shuffle_scope": s}) for s in ("per_layer", "shared")}
    if kind == "alpha_sweep":
        return {f"alpha={a:g}": ms.override({"mixstyle.alpha": a}) for a in ALPHA_SWEEP}
    if kind == "same_domain":
        return {
            "vanilla": cfg.override({"baseline": "vanilla"}),
            "same_domain": ms.override({"mixstyle.perm_mode": "random_shuffle", "sampler": "single_domain"}),
            "cross_domain": ms.override({"mixstyle.perm_mode": "random_shuffle", "sampler": "mixed_domains"}),
        }
    if kind == "label_free_vs_label":
        return {m: ms.override({"mixstyle.perm_mode": m, "sampler": "auto"}) for m in ("random_shuffle", "domain_label")}
    raise ValueError(f"unknown ablation kind {kind!r}")


def run_ablation(
    kind: str,
    cfg: ExperimentConfig,
    seeds: Sequence[int],
    ds: Optional[DomainDataset] = None,
    jobs: int = 1,
) -> ExperimentReport:
    arms = ablation_arms(kind, cfg)
    doc = {"kind": kind, "base": cfg.to_dict(), "arms": {a: c.to_dict() for a, c in arms.items()}}
    return run_arms(arms, seeds, ds, jobs, report_config=doc)
