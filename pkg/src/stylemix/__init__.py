"""MixStyle feature-statistics augmentation and a synthetic domain-generalization harness."""

__version__ = "0.1.0"

from .kernels import BACKEND
from .mixstyle import MixStyleConfig, mix_statistics, mixstyle_forward, reference_permutation
from .sampling import sample_lambda
from .stats import AffineParams, InstanceStats, adain, compute_stats, instance_normalize

__all__ = [
    "BACKEND",
    "AffineParams",
    "InstanceStats",
    "MixStyleConfig",
    "adain",
    "compute_stats",
    "instance_normalize",
    "mix_statistics",
    "mixstyle_forward",
    "reference_permutation",
    "sample_lambda",
]
