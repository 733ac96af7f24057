"""Gaussian-blob tables for sanity runs."""

from __future__ import annotations

import numpy as np
import pandas as pd

from .data import NcdSplit, load_frame, ncd_split


def blob_frame(n_per_class: int, centers: np.ndarray, std: float = 1.0, seed: int = 0) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=float)
    X = np.vstack([c + std * rng.normal(size=(n_per_class, centers.shape[1])) for c in centers])
    labels = np.repeat(np.arange(len(centers)), n_per_class)
    frame = pd.DataFrame(X, columns=[f"x{i}" for i in range(centers.shape[1])])
    frame["label"] = labels.astype(str)
    return frame


def separated_centers(n_classes: int, dim: int, distance: float, seed: int = 0) -> np.ndarray:
    """Random centres pushed apart to at least ``distance`` pairwise."""
    rng = np.random.default_rng(seed)
    while True:
        c = rng.normal(size=(n_classes, dim))
        c *= distance / np.sqrt(2.0)
        d = np.linalg.norm(c[:, None] - c[None, :], axis=-1)
        if d[np.triu_indices(n_classes, 1)].min() >= distance:
            return c


def three_blob_split(seed: int = 0, n_per_class: int = 300, dim: int = 8, distance: float = 8.0) -> NcdSplit:
    """One known blob (``0``) and two unknown blobs (``1``, ``2``), 70/30 split."""
    frame = blob_frame(n_per_class, separated_centers(3, dim, distance, seed=seed), seed=seed)
    ds = load_frame(frame, "label")
    return ncd_split(ds, ["1", "2"], train_fraction=0.7, seed=seed)
