"""Small conv classifier with named blocks and MixStyle insertion points."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from . import layers
from .mixstyle import MixEvent, MixStyleConfig, mixstyle_forward

CKPT_MAGIC = b"SMCK"
CKPT_VERSION = 1

DEFAULT_BLOCKS = ((8, 2), (16, 2), (32, 2), (64, 1))


@dataclass(frozen=True)
class ClassifierConfig:
    blocks: Tuple[Tuple[int, int], ...] = DEFAULT_BLOCKS
    num_classes: int = 5
    in_channels: int = 3
    kernel_size: int = 3
    insertion_mask: Tuple[str, ...] = ("blk1", "blk2", "blk3")
    mixstyle: MixStyleConfig = field(default_factory=MixStyleConfig)

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("classifier needs at least one block")
        object.__setattr__(self, "blocks", tuple((int(c), int(s)) for c, s in self.blocks))
        object.__setattr__(self, "insertion_mask", tuple(self.insertion_mask))
        unknown = set(self.insertion_mask) - set(self.block_names)
        if unknown:
            raise ValueError(f"insertion_mask names unknown blocks: {sorted(unknown)}")

    @property
    def block_names(self) -> Tuple[str, ...]:
        return tuple(f"blk{i + 1}" for i in range(len(self.blocks)))

    def to_dict(self) -> dict:
        return {
            "blocks": [list(b) for b in self.blocks],
            "num_classes": self.num_classes,
            "in_channels": self.in_channels,
            "kernel_size": self.kernel_size,
            "insertion_mask": list(self.insertion_mask),
            "mixstyle": self.mixstyle.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierConfig":
        d = dict(d)
        d["blocks"] = tuple(tuple(b) for b in d["blocks"])
        d["insertion_mask"] = tuple(d["insertion_mask"])
        d["mixstyle"] = MixStyleConfig(**d["mixstyle"])
        return cls(**d)


def mask_from_code(code: str) -> Tuple[str, ...]:
    """``"blk123"`` -> ``("blk1", "blk2", "blk3")``; ``""`` or ``"none"`` -> ``()``."""
    if code in ("", "none"):
        return ()
    digits = code[3:] if code.startswith("blk") else code
    return tuple(f"blk{c}" for c in digits)


def parameter_count(cfg: ClassifierConfig) -> int:
    total, cin = 0, cfg.in_channels
    for cout, _ in cfg.blocks:
        total += cout * cin * cfg.kernel_size**2 + cout
        cin = cout
    return total + cin * cfg.num_classes + cfg.num_classes


class Model:
    """Parameters (leaf nodes, declaration order) plus the forward pass."""

    def __init__(self, cfg: ClassifierConfig, params: Dict[str, ad.Node]):
        self.cfg = cfg
        self.params = params

    @property
    def dtype(self):
        return next(iter(self.params.values())).value.dtype

    def parameter_arrays(self) -> List[np.ndarray]:
        return [p.value for p in self.params.values()]

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def with_mixstyle(self, mixstyle: MixStyleConfig, insertion_mask: Optional[Sequence[str]] = None) -> "Model":
        """Same weights, different MixStyle settings."""
        kw = {"mixstyle": mixstyle}
        if insertion_mask is not None:
            kw["insertion_mask"] = tuple(insertion_mask)
        return Model(replace(self.cfg, **kw), self.params)

    def forward(
        self,
        x,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
        *,
        perm_cache: Optional[dict] = None,
        lam: Optional[np.ndarray] = None,
        trace: Optional[Dict[str, List[MixEvent]]] = None,
        capture: Optional[Dict[str, np.ndarray]] = None,
    ) -> ad.Node:
        """Logits (B, K).

        ``perm_cache`` defaults to a fresh dict per call, which is what makes a
        ``shared`` shuffle scope reuse one permutation across insertion points.
        ``capture`` receives each block's output feature map by name.
        """
        h = x if isinstance(x, ad.Node) else ad.constant(np.asarray(x, dtype=self.dtype))
        if h.value.ndim != 4 or h.shape[1] != self.cfg.in_channels:
            raise ad.ShapeError("classifier input", h.shape, (None, self.cfg.in_channels, None, None))
        active = training and bool(self.cfg.insertion_mask)
        if active and rng is None:
            raise ValueError("training forward with MixStyle needs an rng")
        if perm_cache is None:
            perm_cache = {}
        pad = self.cfg.kernel_size // 2
        for name, (_, stride) in zip(self.cfg.block_names, self.cfg.blocks):
            h = layers.relu(layers.conv2d(h, self.params[f"{name}.w"], self.params[f"{name}.b"], stride, pad))
            if capture is not None:
                capture[name] = h.value
            if active and name in self.cfg.insertion_mask:
                events = None if trace is None else trace.setdefault(name, [])
                h = mixstyle_forward(
                    h, self.cfg.mixstyle, rng, True, lam=lam, perm_cache=perm_cache, trace=events
                )
        feats = layers.global_avg_pool(h)
        return layers.linear(feats, self.params["head.w"], self.params["head.b"])

    def predict(self, images, batch_size: int = 256) -> np.ndarray:
        out = []
        for s in range(0, len(images), batch_size):
            out.append(self.forward(images[s:s + batch_size]).value.argmax(axis=1))
        return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def build_classifier(cfg: ClassifierConfig, seed: int = 0, dtype=np.float64) -> Model:
    """He-uniform conv weights, 1/sqrt(fan_in)-uniform head, zero biases."""
    rng = np.random.default_rng(seed)
    params: Dict[str, ad.Node] = {}
    cin, k = cfg.in_channels, cfg.kernel_size
    for name, (cout, _) in zip(cfg.block_names, cfg.blocks):
        bound = np.sqrt(6.0 / (cin * k * k))
        params[f"{name}.w"] = ad.Node(rng.uniform(-bound, bound, (cout, cin, k, k)).astype(dtype), name=f"{name}.w")
        params[f"{name}.b"] = ad.Node(np.zeros(cout, dtype=dtype), name=f"{name}.b")
        cin = cout
    bound = 1.0 / np.sqrt(cin)
    params["head.w"] = ad.Node(rng.uniform(-bound, bound, (cin, cfg.num_classes)).astype(dtype), name="head.w")
    params["head.b"] = ad.Node(np.zeros(cfg.num_classes, dtype=dtype), name="head.b")
    return Model(cfg, params)


def save_checkpoint(model: Model, path) -> Path:
    """Header, config JSON, then float32 weights in declaration order."""
    path = Path(path)
    cfg_bytes = json.dumps(model.cfg.to_dict(), sort_keys=True).encode()
    names = list(model.params)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", CKPT_MAGIC, CKPT_VERSION, len(cfg_bytes)))
        fh.write(cfg_bytes)
        for name in names:
            fh.write(np.ascontiguousarray(model.params[name].value, dtype="<f4").tobytes())
    return path


def load_checkpoint(path, dtype=np.float64) -> Model:
    raw = Path(path).read_bytes()
    magic, version, n = struct.unpack_from("<4sII", raw)
    if magic != CKPT_MAGIC or version != CKPT_VERSION:
        raise ValueError(f"{path}: not a stylemix checkpoint")
    off = struct.calcsize("<4sII")
    cfg = ClassifierConfig.from_dict(json.loads(raw[off:off + n]))
    off += n
    template = build_classifier(cfg, 0, dtype)
    params = {}
    for name, node in template.params.items():
        count = node.value.size
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(node.shape)
        params[name] = ad.Node(arr.astype(dtype), name=name)
        off += 4 * count
    if off != len(raw):
        raise ValueError(f"{path}: trailing bytes after weights")
    return Model(cfg, params)
