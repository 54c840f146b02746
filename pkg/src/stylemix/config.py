"""Experiment configuration: nested dataclasses, JSON I/O, dotted overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Tuple

from .mixstyle import MIX_MODES, PERM_MODES, SHUFFLE_SCOPES, MixStyleConfig
from .nets import DEFAULT_BLOCKS, ClassifierConfig

BASELINES = ("vanilla", "mixstyle", "mixup_no_interp")
SAMPLERS = ("auto", "mixed_domains", "single_domain", "two_domain")
ABLATIONS = ("insertion", "mix_vs_replace", "shuffle_scope", "alpha_sweep", "same_domain", "label_free_vs_label")
PRECISIONS = ("float64", "float32")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


@dataclass
class DataConfig:
    num_classes: int = 5
    num_domains: int = 4
    per_cell: int = 100
    height: int = 32
    width: int = 32
    channels: int = 3
    seed: int = 0
    style_jitter: float = 0.05
    pixel_noise: float = 0.3
    path: Optional[str] = None  # load an exported dataset instead of generating


@dataclass
class ModelConfig:
    blocks: Tuple[Tuple[int, int], ...] = DEFAULT_BLOCKS
    insertion_mask: Tuple[str, ...] = ("blk1", "blk2", "blk3")


@dataclass
class MixStyleSection:
    p: float = 0.5
    alpha: float = 0.1
    eps: float = 1e-6
    perm_mode: str = "random_shuffle"
    mix_mode: str = "convex"
    shuffle_scope: str = "per_layer"


@dataclass
class OptimizerConfig:
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 30
    batch_size: int = 32
    grad_clip: float = 5.0  # global gradient-norm cap; 0 disables


@dataclass
class AnalysisConfig:
    layers: Tuple[str, ...] = ()  # empty: every block
    max_points: int = 1000


@dataclass
class ExperimentConfig:
    seed: int = 0
    baseline: str = "mixstyle"
    sampler: str = "auto"
    precision: str = "float64"
    kind: str = "insertion"
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    mixstyle: MixStyleSection = field(default_factory=MixStyleSection)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    # -- derived views ---------------------------------------------------

    def mixstyle_config(self) -> MixStyleConfig:
        return MixStyleConfig(**asdict(self.mixstyle))

    def classifier_config(self) -> ClassifierConfig:
        mask = self.model.insertion_mask if self.baseline == "mixstyle" else ()
        return ClassifierConfig(
            blocks=self.model.blocks,
            num_classes=self.data.num_classes,
            in_channels=self.data.channels,
            insertion_mask=mask,
            mixstyle=self.mixstyle_config(),
        )

    def analysis_layers(self) -> Tuple[str, ...]:
        return self.analysis.layers or tuple(f"blk{i + 1}" for i in range(len(self.model.blocks)))

    def resolved_sampler(self) -> str:
        if self.sampler != "auto":
            return self.sampler
        if self.baseline == "mixstyle" and self.mixstyle.perm_mode == "domain_label":
            return "two_domain"
        return "mixed_domains"

    # -- serialisation ---------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"]["blocks"] = [list(b) for b in self.model.blocks]
        d["model"]["insertion_mask"] = list(self.model.insertion_mask)
        d["analysis"]["layers"] = list(self.analysis.layers)
        return d

    def key(self) -> str:
        """Canonical JSON, usable as a cache key."""
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ExperimentConfig":
        cfg = _build(cls, d, "")
        validate(cfg)
        return cfg

    def override(self, updates: Mapping[str, Any]) -> "ExperimentConfig":
        """Copy with dotted-key updates applied and validated."""
        d = self.to_dict()
        for key, value in updates.items():
            set_dotted(d, key, value)
        return ExperimentConfig.from_dict(d)


def _build(cls, d: Mapping[str, Any], prefix: str):
    if not isinstance(d, Mapping):
        raise ConfigError(prefix.rstrip(".") or "<root>", "expected an object")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in d.items():
        path = prefix + key
        if key not in known:
            raise ConfigError(path, "unknown key")
        default = getattr(cls(), key)
        if is_dataclass(default):
            kwargs[key] = _build(type(default), value, path + ".")
        else:
            kwargs[key] = _coerce(path, default, value)
    return cls(**kwargs)


def _coerce(path: str, default, value):
    if path == "model.blocks":
        try:
            blocks = tuple((int(c), int(s)) for c, s in value)
        except (TypeError, ValueError):
            raise ConfigError(path, "expected a list of [out_channels, stride] pairs") from None
        return blocks
    if isinstance(default, tuple):
        if isinstance(value, str):
            from .nets import mask_from_code

            return mask_from_code(value) if path == "model.insertion_mask" else tuple(v for v in value.split(",") if v)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, "expected a list")
        return tuple(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, "expected a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str) or default is None:
        if value is not None and not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    return value


def _choice(key, value, allowed):
    if value not in allowed:
        raise ConfigError(key, f"must be one of {list(allowed)}, got {value!r}")


def validate(cfg: ExperimentConfig) -> None:
    _choice("baseline", cfg.baseline, BASELINES)
    _choice("sampler", cfg.sampler, SAMPLERS)
    _choice("precision", cfg.precision, PRECISIONS)
    _choice("kind", cfg.kind, ABLATIONS)
    _choice("mixstyle.perm_mode", cfg.mixstyle.perm_mode, PERM_MODES)
    _choice("mixstyle.mix_mode", cfg.mixstyle.mix_mode, MIX_MODES)
    _choice("mixstyle.shuffle_scope", cfg.mixstyle.shuffle_scope, SHUFFLE_SCOPES)
    ms = cfg.mixstyle
    if not 0.0 <= ms.p <= 1.0:
        raise ConfigError("mixstyle.p", "must lie in [0, 1]")
    if not ms.alpha > 0:
        raise ConfigError("mixstyle.alpha", "must be > 0")
    if not ms.eps > 0:
        raise ConfigError("mixstyle.eps", "must be > 0")
    opt = cfg.optimizer
    if not opt.lr > 0:
        raise ConfigError("optimizer.lr", f"must be > 0, got {opt.lr}")
    if not 0.0 <= opt.momentum < 1.0:
        raise ConfigError("optimizer.momentum", "must lie in [0, 1)")
    if opt.weight_decay < 0:
        raise ConfigError("optimizer.weight_decay", "must be >= 0")
    if opt.grad_clip < 0:
        raise ConfigError("optimizer.grad_clip", "must be >= 0")
    if opt.epochs < 1:
        raise ConfigError("optimizer.epochs", "must be >= 1")
    if opt.batch_size < 4 or opt.batch_size % 2:
        raise ConfigError("optimizer.batch_size", "must be even and >= 4")
    data = cfg.data
    if data.num_classes < 2:
        raise ConfigError("data.num_classes", "must be >= 2")
    if data.num_domains < 3:
        raise ConfigError("data.num_domains", "must be >= 3")
    if data.per_cell < 10:
        raise ConfigError("data.per_cell", "must be >= 10 so every split is non-empty")
    if data.height < 16 or data.height != data.width:
        raise ConfigError("data.height", "images must be square with side >= 16")
    if data.pixel_noise < 0:
        raise ConfigError("data.pixel_noise", "must be >= 0")
    if data.style_jitter < 0:
        raise ConfigError("data.style_jitter", "must be >= 0")
    if not cfg.model.blocks:
        raise ConfigError("model.blocks", "need at least one block")
    names = {f"blk{i + 1}" for i in range(len(cfg.model.blocks))}
    for name in cfg.model.insertion_mask:
        if name not in names:
            raise ConfigError("model.insertion_mask", f"unknown block {name!r}")
    for name in cfg.analysis.layers:
        if name not in names:
            raise ConfigError("analysis.layers", f"unknown block {name!r}")
    for c, s in cfg.model.blocks:
        if c < 1 or s < 1:
            raise ConfigError("model.blocks", "channels and strides must be positive")


def set_dotted(d: dict, key: str, value) -> None:
    parts = key.split(".")
    node = d
    for i, part in enumerate(parts[:-1]):
        if not isinstance(node.get(part), dict):
            raise ConfigError(".".join(parts[: i + 1]), "unknown section")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(key, "unknown key")
    node[parts[-1]] = value


def parse_override(text: str) -> Tuple[str, Any]:
    """``"optimizer.lr=0.1"`` -> ``("optimizer.lr", 0.1)``; non-JSON values stay strings."""
    if "=" not in text:
        raise ConfigError(text, "override must look like key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> Tuple[ExperimentConfig, dict]:
    """Config from a JSON file (plain config or a run manifest) plus overrides.

    Returns the config and the raw document (empty without a file), so callers
    can pick up a manifest's seed list.
    """
    doc: dict = {}
    base: dict = ExperimentConfig().to_dict()
    if path is not None:
        doc = json.loads(Path(path).read_text())
        if not isinstance(doc, dict):
            raise ConfigError("<root>", "config file must hold a JSON object")
        src = doc.get("resolved_config", doc)
        merged = copy.deepcopy(base)
        _merge(merged, src, "")
        base = merged
    for item in overrides:
        key, value = parse_override(item)
        set_dotted(base, key, value)
    return ExperimentConfig.from_dict(base), doc


def _merge(dst: dict, src: Mapping, prefix: str) -> None:
    for key, value in src.items():
        if key not in dst:
            raise ConfigError(prefix + key, "unknown key")
        if isinstance(dst[key], dict):
            if not isinstance(value, Mapping):
                raise ConfigError(prefix + key, "expected an object")
            _merge(dst[key], value, prefix + key + ".")
        else:
            dst[key] = value
