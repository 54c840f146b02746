"""Per-layer style statistics and how well they separate domains vs classes."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from sklearn.metrics import silhouette_score

from .data import DomainDataset
from .nets import Model
from .stats import DEFAULT_EPS, compute_stats


@dataclass
class StyleEmbedding:
    vectors: np.ndarray  # (N, 2C): [mu, sigma]
    layer: str
    domain_labels: np.ndarray
    class_labels: np.ndarray


def collect_style_stats(
    model: Model,
    ds: DomainDataset,
    layer: str,
    indices: Optional[np.ndarray] = None,
    batch_size: int = 256,
    eps: float = DEFAULT_EPS,
) -> StyleEmbedding:
    """Eval-mode forward, then (mu, sigma) of ``layer``'s output per instance."""
    if layer not in model.cfg.block_names:
        raise KeyError(f"unknown layer {layer!r}; have {model.cfg.block_names}")
    idx = np.arange(len(ds)) if indices is None else np.asarray(indices)
    chunks = []
    for s in range(0, idx.size, batch_size):
        sel = idx[s:s + batch_size]
        captured = {}
        model.forward(ds.images[sel].astype(model.dtype), training=False, capture=captured)
        st = compute_stats(captured[layer], eps)
        chunks.append(np.concatenate([st.mu, st.sigma], axis=1))
    vectors = np.concatenate(chunks) if chunks else np.empty((0, 0))
    return StyleEmbedding(vectors, layer, ds.domain_labels[idx], ds.class_labels[idx])


def pca_2d(vectors: np.ndarray) -> np.ndarray:
    """Project onto the top two principal axes.

    Axes come from the covariance eigendecomposition, ordered by eigenvalue;
    each axis is signed so its largest-magnitude loading is positive.
    """
    x = np.asarray(vectors, dtype=np.float64)
    centred = x - x.mean(axis=0)
    cov = centred.T @ centred / max(1, x.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:2]
    comps = evecs[:, order]
    flip = np.sign(comps[np.abs(comps).argmax(axis=0), np.arange(comps.shape[1])])
    comps = comps * np.where(flip == 0, 1.0, flip)
    return centred @ comps


def project_and_score(emb: StyleEmbedding) -> Tuple[np.ndarray, float, float]:
    """2-D PCA coordinates plus domain and class silhouette scores.

    Silhouettes use Euclidean distance in the full embedding space.
    """
    v = np.asarray(emb.vectors, dtype=np.float64)
    if v.shape[0] < 3:
        raise ValueError("need at least 3 points")
    if np.all(v.std(axis=0) == 0):
        raise ValueError("embedding set has zero variance")
    scores = []
    for labels in (emb.domain_labels, emb.class_labels):
        if np.unique(labels).size < 2:
            scores.append(float("nan"))
        else:
            scores.append(float(silhouette_score(v, labels, metric="euclidean")))
    return pca_2d(v), scores[0], scores[1]


def write_coordinates(path, coords: np.ndarray, emb: StyleEmbedding) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pc1", "pc2", "domain", "class", "layer"])
        for (a, b), d, c in zip(coords, emb.domain_labels, emb.class_labels):
            w.writerow([repr(float(a)), repr(float(b)), int(d), int(c), emb.layer])
    return path
