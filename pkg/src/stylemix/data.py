"""Procedural multi-domain image benchmark.

Class identity lives in a binary shape mask; domain identity lives in a
per-channel affine colour/contrast transform plus a sinusoidal background
texture.  The same mask bank is reused across domains, so two images with the
same (class, index) differ only in style.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

MAGIC = b"SMLD"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4s7I")

SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST = 0, 1, 2
SPLIT_FRACTIONS = (0.8, 0.1, 0.1)

SHIFT_RANGE = (-0.3, 0.3)
SCALE_RANGE = (0.6, 1.6)
AMP_RANGE = (0.0, 0.2)
PIXEL_NOISE = 0.3  # std of the content noise added before styling
SHIFT_TRIES = 16  # candidate colour-shift sets per generation


@dataclass(frozen=True)
class DomainSpec:
    domain_id: int
    channel_shift: Tuple[float, ...]
    channel_scale: Tuple[float, ...]
    texture_freq: float = 0.0
    texture_amp: float = 0.0
    texture_angle: float = 0.0

    def __post_init__(self):
        if any(s <= 0 for s in self.channel_scale):
            raise ValueError("channel_scale entries must be positive")
        if self.texture_amp < 0:
            raise ValueError("texture_amp must be non-negative")
        if len(self.channel_shift) != len(self.channel_scale):
            raise ValueError("channel_shift and channel_scale lengths differ")

    @classmethod
    def identity(cls, domain_id: int = 0, channels: int = 3) -> "DomainSpec":
        return cls(domain_id, (0.0,) * channels, (1.0,) * channels)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        return cls(
            int(d["domain_id"]),
            tuple(float(v) for v in d["channel_shift"]),
            tuple(float(v) for v in d["channel_scale"]),
            float(d.get("texture_freq", 0.0)),
            float(d.get("texture_amp", 0.0)),
            float(d.get("texture_angle", 0.0)),
        )


@dataclass
class DomainDataset:
    images: np.ndarray  # (N, C, H, W) float32 in [0, 1]
    class_labels: np.ndarray  # (N,) int
    domain_labels: np.ndarray  # (N,) int
    specs: List[DomainSpec]
    num_classes: int
    split: Optional[np.ndarray] = None  # (N,) of SPLIT_* codes
    masks: Optional[np.ndarray] = None  # (N, H, W) pre-style shape masks
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.images.shape[0]
        if self.class_labels.shape != (n,) or self.domain_labels.shape != (n,):
            raise ValueError("label arrays must have one entry per image")
        if n and (self.class_labels.min() < 0 or self.class_labels.max() >= self.num_classes):
            raise ValueError("class label out of range")
        if n and (self.domain_labels.min() < 0 or self.domain_labels.max() >= len(self.specs)):
            raise ValueError("domain label out of range")

    @property
    def num_domains(self) -> int:
        return len(self.specs)

    def __len__(self):
        return self.images.shape[0]

    def indices(self, domains: Optional[Sequence[int]] = None, split: Optional[int] = None) -> np.ndarray:
        """Sorted example indices restricted to ``domains`` and ``split``."""
        keep = np.ones(len(self), dtype=bool)
        if domains is not None:
            keep &= np.isin(self.domain_labels, np.asarray(list(domains)))
        if split is not None:
            if self.split is None:
                raise ValueError("dataset carries no split assignment")
            keep &= self.split == split
        return np.flatnonzero(keep)


# --- shape archetypes -------------------------------------------------------


def _disk(yy, xx, r):
    return yy**2 + xx**2 <= r**2


def _square(yy, xx, r):
    return (np.abs(yy) <= 0.8 * r) & (np.abs(xx) <= 0.8 * r)


def _cross(yy, xx, r):
    t = 0.3 * r
    return ((np.abs(yy) <= t) & (np.abs(xx) <= r)) | ((np.abs(xx) <= t) & (np.abs(yy) <= r))


def _triangle(yy, xx, r):
    # apex up, base at +r/2
    return (yy <= 0.6 * r) & (yy >= -r) & (np.abs(xx) <= (yy + r) * 0.6)


def _ring(yy, xx, r):
    d2 = yy**2 + xx**2
    return (d2 <= r**2) & (d2 >= (0.55 * r) ** 2)


def _diamond(yy, xx, r):
    return np.abs(yy) + np.abs(xx) <= r


def _hbar(yy, xx, r):
    return (np.abs(yy) <= 0.3 * r) & (np.abs(xx) <= r)


def _saltire(yy, xx, r):
    t = 0.3 * r
    inside = (np.abs(yy) <= r) & (np.abs(xx) <= r)
    return inside & ((np.abs(yy - xx) <= t * 1.4) | (np.abs(yy + xx) <= t * 1.4))


ARCHETYPES = {
    "disk": _disk,
    "square": _square,
    "cross": _cross,
    "triangle": _triangle,
    "ring": _ring,
    "diamond": _diamond,
    "hbar": _hbar,
    "saltire": _saltire,
}
ARCHETYPE_NAMES = tuple(ARCHETYPES)


# area of each archetype at r=1, so every class covers the area of a disk of radius r
_UNIT_AREA = {
    "disk": np.pi,
    "square": 2.56,
    "cross": 2.04,
    "triangle": 1.536,
    "ring": np.pi * (1 - 0.55**2),
    "diamond": 2.0,
    "hbar": 1.2,
    "saltire": 2.66,
}
RADIUS_RANGE = (0.26, 0.32)  # disk-equivalent radius, fraction of the image side


def shape_mask(kind: str, height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """Binary mask of one archetype with jittered centre and size.

    Sizes are area-matched across archetypes so that a mask's pixel count
    says little about its class.
    """
    size = min(height, width)
    r = rng.uniform(*RADIUS_RANGE) * size * np.sqrt(np.pi / _UNIT_AREA[kind])
    cy = height / 2 + rng.uniform(-0.12, 0.12) * size
    cx = width / 2 + rng.uniform(-0.12, 0.12) * size
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    return ARCHETYPES[kind](yy + 0.5 - cy, xx + 0.5 - cx, r)


def _texture(spec: DomainSpec, height: int, width: int, phase: float) -> np.ndarray:
    if spec.texture_amp == 0.0:
        return np.zeros((height, width))
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    u = xx * np.cos(spec.texture_angle) + yy * np.sin(spec.texture_angle)
    return np.sin(2 * np.pi * spec.texture_freq * u / width + phase)


def stylize(
    mask: np.ndarray,
    spec: DomainSpec,
    phase: float = 0.0,
    shift_jitter: Optional[np.ndarray] = None,
    scale_jitter: Optional[np.ndarray] = None,
    noise: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Render ``mask`` (H, W) in the style of ``spec``; returns (C, H, W) in [0, 1].

    The unstyled image is the mask itself; texture is added on the background
    and ``noise`` (H, W), if given, on top of both before styling.
    """
    H, W = mask.shape
    raw = mask.astype(np.float64)
    base = raw + spec.texture_amp * _texture(spec, H, W, phase) * (1.0 - raw)
    if noise is not None:
        base = base + noise
    shift = np.asarray(spec.channel_shift, dtype=np.float64)
    scale = np.asarray(spec.channel_scale, dtype=np.float64)
    if shift_jitter is not None:
        shift = shift + shift_jitter
    if scale_jitter is not None:
        scale = scale * scale_jitter
    img = scale[:, None, None] * base[None] + shift[:, None, None]
    return np.clip(img, 0.0, 1.0)


def _spread_shifts(num_domains: int, channels: int, rng: np.random.Generator, tries: int = SHIFT_TRIES) -> np.ndarray:
    best, best_gap = None, -1.0
    for _ in range(tries):
        cand = rng.uniform(*SHIFT_RANGE, (num_domains, channels))
        gaps = np.linalg.norm(cand[:, None] - cand[None], axis=2)
        gap = gaps[np.triu_indices(num_domains, 1)].min()
        if gap > best_gap:
            best, best_gap = cand, gap
    return best


def default_domain_specs(num_domains: int, channels: int, rng: np.random.Generator) -> List[DomainSpec]:
    """Domain styles spread across the allowed parameter ranges.

    Contrast levels and texture settings are stratified over domains so that
    no two domains share a style.  Colour shifts are drawn per channel, keeping
    the candidate set whose closest pair is furthest apart.
    """
    levels = np.linspace(0.0, 1.0, num_domains)
    contrast_order = rng.permutation(num_domains)
    texture_order = rng.permutation(num_domains)
    shifts = _spread_shifts(num_domains, channels, rng)
    specs = []
    for d in range(num_domains):
        lvl = levels[contrast_order[d]]
        base_scale = SCALE_RANGE[0] + lvl * (SCALE_RANGE[1] - SCALE_RANGE[0])
        scale = np.clip(base_scale * np.exp(rng.normal(0.0, 0.15, channels)), *SCALE_RANGE)
        shift = shifts[d]
        tl = levels[texture_order[d]]
        specs.append(
            DomainSpec(
                domain_id=d,
                channel_shift=tuple(float(v) for v in shift),
                channel_scale=tuple(float(v) for v in scale),
                texture_freq=float(1.0 + 5.0 * tl),
                texture_amp=float(AMP_RANGE[0] + tl * (AMP_RANGE[1] - AMP_RANGE[0])),
                texture_angle=float(rng.uniform(0.0, np.pi)),
            )
        )
    return specs


def _split_codes(per_cell: int, rng: np.random.Generator) -> np.ndarray:
    n_train = int(round(SPLIT_FRACTIONS[0] * per_cell))
    n_val = int(round(SPLIT_FRACTIONS[1] * per_cell))
    codes = np.full(per_cell, SPLIT_TEST, dtype=np.int8)
    order = rng.permutation(per_cell)
    codes[order[:n_train]] = SPLIT_TRAIN
    codes[order[n_train:n_train + n_val]] = SPLIT_VAL
    return codes


def generate_dataset(
    num_classes: int = 5,
    num_domains: int = 4,
    per_cell: int = 100,
    height: int = 32,
    width: int = 32,
    channels: int = 3,
    seed: int = 0,
    specs: Optional[Sequence[DomainSpec]] = None,
    style_jitter: float = 0.05,
    pixel_noise: float = PIXEL_NOISE,
) -> DomainDataset:
    """Generate ``num_classes * num_domains * per_cell`` styled shape images.

    Layout is domain-major, then class, then index within the cell.  The
    train/val/test split is assigned per mask index and shared by all domains,
    so a test mask never appears in any domain's training data.
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if num_classes > len(ARCHETYPES):
        raise ValueError(f"num_classes={num_classes} exceeds the {len(ARCHETYPES)} available archetypes")
    if num_domains < 3:
        raise ValueError("need at least 3 domains for leave-one-domain-out")
    if height < 16 or width < 16 or height != width:
        raise ValueError("images must be square with side >= 16")
    if per_cell < 1:
        raise ValueError("per_cell must be positive")

    if pixel_noise < 0:
        raise ValueError("pixel_noise must be non-negative")
    root = np.random.SeedSequence(seed)
    spec_rng, mask_rng, split_rng, style_rng, noise_rng = (np.random.default_rng(s) for s in root.spawn(5))
    if specs is None:
        specs = default_domain_specs(num_domains, channels, spec_rng)
    specs = list(specs)
    if len(specs) != num_domains:
        raise ValueError("number of specs does not match num_domains")

    bank = np.stack(
        [
            np.stack([shape_mask(ARCHETYPE_NAMES[k], height, width, mask_rng) for _ in range(per_cell)])
            for k in range(num_classes)
        ]
    )  # (K, per_cell, H, W)
    cell_split = np.stack([_split_codes(per_cell, split_rng) for _ in range(num_classes)])

    n = num_domains * num_classes * per_cell
    images = np.empty((n, channels, height, width), dtype=np.float32)
    masks = np.empty((n, height, width), dtype=bool)
    class_labels = np.empty(n, dtype=np.int64)
    domain_labels = np.empty(n, dtype=np.int64)
    split = np.empty(n, dtype=np.int8)
    i = 0
    for d, spec in enumerate(specs):
        for k in range(num_classes):
            for m in range(per_cell):
                phase = style_rng.uniform(0.0, 2 * np.pi)
                shift_j = style_rng.normal(0.0, style_jitter, channels)
                scale_j = np.exp(style_rng.normal(0.0, style_jitter, channels))
                noise = noise_rng.normal(0.0, pixel_noise, (height, width)) if pixel_noise > 0 else None
                images[i] = stylize(bank[k, m], spec, phase, shift_j, scale_j, noise)
                masks[i] = bank[k, m]
                class_labels[i] = k
                domain_labels[i] = d
                split[i] = cell_split[k, m]
                i += 1
    meta = dict(
        num_classes=num_classes,
        num_domains=num_domains,
        per_cell=per_cell,
        height=height,
        width=width,
        channels=channels,
        seed=seed,
        style_jitter=style_jitter,
        pixel_noise=pixel_noise,
    )
    return DomainDataset(images, class_labels, domain_labels, specs, num_classes, split, masks, meta)


# --- samplers ---------------------------------------------------------------


def sample_two_domain_batch(
    ds: DomainDataset,
    i: int,
    j: int,
    half: int,
    rng: np.random.Generator,
    pool: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Batch laid out as ``[x_i, x_j]``, ``half`` examples from each domain.

    Returns ``(images, class_labels, domain_labels, indices)``.  ``pool``
    restricts sampling to the given example indices (e.g. a training split).
    """
    if i == j:
        raise ValueError("two-domain batches need two distinct domains")
    pool = np.arange(len(ds)) if pool is None else np.asarray(pool)
    picks = []
    for d in (i, j):
        cand = pool[ds.domain_labels[pool] == d]
        if cand.size < half:
            raise ValueError(f"domain {d} has {cand.size} examples, need {half}")
        picks.append(rng.choice(cand, size=half, replace=False))
    idx = np.concatenate(picks)
    return ds.images[idx], ds.class_labels[idx], ds.domain_labels[idx], idx


def sample_batch(
    ds: DomainDataset,
    mode: str,
    batch_size: int,
    rng: np.random.Generator,
    pool: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Uniform batch over ``pool`` (``mixed_domains``) or over one of its domains
    chosen uniformly (``single_domain``)."""
    pool = np.arange(len(ds)) if pool is None else np.asarray(pool)
    if pool.size == 0:
        raise ValueError("empty source set")
    if mode == "mixed_domains":
        cand = pool
    elif mode == "single_domain":
        doms = np.unique(ds.domain_labels[pool])
        d = doms[rng.integers(doms.size)]
        cand = pool[ds.domain_labels[pool] == d]
    else:
        raise ValueError(f"unknown sampler mode {mode!r}")
    if batch_size > cand.size:
        raise ValueError(f"batch of {batch_size} requested from {cand.size} examples")
    idx = rng.choice(cand, size=batch_size, replace=False)
    return ds.images[idx], ds.class_labels[idx], ds.domain_labels[idx], idx


# --- file format --------------------------------------------------------------


def save_dataset(ds: DomainDataset, path) -> Tuple[Path, Path]:
    """Write ``path`` (binary) and ``path`` + ``.json`` (specs and split)."""
    path = Path(path)
    N, C, H, W = ds.images.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, N, C, H, W, ds.num_classes, ds.num_domains))
        fh.write(np.ascontiguousarray(ds.images, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(ds.class_labels, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(ds.domain_labels, dtype="<i4").tobytes())
    sidecar = path.with_name(path.name + ".json")
    doc = {
        "format": "SMLD",
        "version": FORMAT_VERSION,
        "specs": [s.to_dict() for s in ds.specs],
        "split": None if ds.split is None else ds.split.astype(int).tolist(),
        "meta": ds.meta,
    }
    sidecar.write_text(json.dumps(doc, indent=1))
    return path, sidecar


def load_dataset(path) -> DomainDataset:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, N, C, H, W, K, D = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    npix = N * C * H * W
    expected = _HEADER.size + 4 * npix + 8 * N
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    off = _HEADER.size
    images = np.frombuffer(raw, dtype="<f4", count=npix, offset=off).reshape(N, C, H, W).astype(np.float32)
    off += 4 * npix
    cls = np.frombuffer(raw, dtype="<i4", count=N, offset=off).astype(np.int64)
    dom = np.frombuffer(raw, dtype="<i4", count=N, offset=off + 4 * N).astype(np.int64)

    sidecar = path.with_name(path.name + ".json")
    if sidecar.exists():
        doc = json.loads(sidecar.read_text())
        specs = [DomainSpec.from_dict(s) for s in doc["specs"]]
        split = None if doc.get("split") is None else np.asarray(doc["split"], dtype=np.int8)
        meta = doc.get("meta", {})
    else:
        specs = [DomainSpec.identity(d, C) for d in range(D)]
        split, meta = None, {}
    if len(specs) != D:
        raise ValueError(f"{path}: header says {D} domains, sidecar has {len(specs)}")
    return DomainDataset(images, cls, dom, specs, K, split, None, meta)
