"""Lloyd's k-means with k-means++ seeding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError


def _sq_dist(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = (X * X).sum(axis=1)[:, None] - 2.0 * X @ C.T + (C * C).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    closest = _sq_dist(X, centers[:1])[:, 0]
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            # every point already coincides with a centre
            idx = rng.integers(n)
        else:
            idx = min(int(np.searchsorted(np.cumsum(closest), rng.uniform() * total, side="right")), n - 1)
        centers[i] = X[idx]
        closest = np.minimum(closest, _sq_dist(X, centers[i : i + 1])[:, 0])
    return centers


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    n_iter: int
    history: list[float] = field(default_factory=list)


def lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int = 300) -> KMeansResult:
    centers = centers.copy()
    k = centers.shape[0]
    labels = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        d = _sq_dist(X, centers)
        new = np.argmin(d, axis=1)
        history.append(float(d[np.arange(len(X)), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        cost = d[np.arange(len(X)), labels]
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = X[members].mean(axis=0)
            else:
                # empty cluster: reseed at the point currently worst served
                far = int(np.argmax(cost))
                centers[j] = X[far]
                cost[far] = -1.0
    d = _sq_dist(X, centers)
    labels = np.argmin(d, axis=1)
    inertia = float(d[np.arange(len(X)), labels].sum())
    return KMeansResult(labels, centers, inertia, it, history)


def kmeans(X: np.ndarray, k: int, seed: int = 0, max_iter: int = 300, n_init: int = 10) -> KMeansResult:
    """Best-inertia run over ``n_init`` seeded restarts (ties keep the earliest)."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ConfigurationError(f"k-means needs 1 <= k <= n (k={k}, n={n})")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        res = lloyd(X, kmeans_plusplus(X, k, rng), max_iter)
        if best is None or res.inertia < best.inertia:
            best = res
    return best
