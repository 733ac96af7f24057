"""SMOTE-NC perturbations used by the consistency regularizer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ColumnSchema, TrainingSet
from .errors import ConfigurationError


@dataclass(frozen=True)
class AugmentConfig:
    k_neighbors: int = 5
    seed: int | tuple[int, ...] = 0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ConfigurationError("k_neighbors must be at least 1")


def _distances(x: np.ndarray, pool: np.ndarray, cont: np.ndarray) -> np.ndarray:
    if len(cont) == 0:
        return np.zeros(pool.shape[0])
    diff = pool[:, cont] - x[cont]
    return np.sqrt((diff * diff).sum(axis=1))


def _nearest(dist: np.ndarray, k: int) -> np.ndarray:
    # distance ties resolved toward the lower pool index
    return np.argsort(dist, kind="stable")[:k]


def _vote(x: np.ndarray, neighbours: np.ndarray, spans: list[tuple[int, int]]) -> np.ndarray:
    """Majority category per one-hot group; ties keep x's category, else the lowest one."""
    out = x.copy()
    for start, stop in spans:
        counts = neighbours[:, start:stop].sum(axis=0)
        best = np.flatnonzero(counts == counts.max())
        own = np.flatnonzero(x[start:stop] == 1)
        choice = own[0] if len(own) and own[0] in best else best[0]
        out[start:stop] = 0.0
        out[start + choice] = 1.0
    return out


def smote_nc_perturb(
    x: np.ndarray,
    pool: np.ndarray,
    schema: ColumnSchema,
    cfg: AugmentConfig,
    rng: np.random.Generator,
    lam: float | None = None,
) -> np.ndarray:
    """Interpolate ``x`` toward one of its ``k`` nearest pool rows.

    Distances use continuous columns only.  Continuous values move a
    fraction ``lam ~ U(0, 1)`` of the way to the chosen neighbour;
    categorical groups take the neighbours' majority category.
    """
    if pool.shape[0] < cfg.k_neighbors + 1:
        raise ConfigurationError(f"pool has {pool.shape[0]} rows, need at least k_neighbors + 1 = {cfg.k_neighbors + 1}")
    cont = schema.continuous_idx
    nn_idx = _nearest(_distances(x, pool, cont), cfg.k_neighbors)
    chosen = pool[nn_idx[rng.integers(len(nn_idx))]]
    if lam is None:
        lam = rng.uniform()
    out = _vote(x, pool[nn_idx], schema.categorical_spans)
    out[cont] = x[cont] + lam * (chosen[cont] - x[cont])
    return out


class SmoteNC:
    """Batch SMOTE-NC over a training set with precomputed neighbour lists.

    Labeled rows draw neighbours among labeled rows of the same class;
    unlabeled rows among all unlabeled rows.  A row is never its own
    neighbour.  Neighbour lists depend only on input features so they are
    computed once; each call to :meth:`perturb` draws fresh neighbours and
    interpolation factors.
    """

    def __init__(self, data: TrainingSet, cfg: AugmentConfig, chunk: int = 2048):
        self.data = data
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        n = len(data)
        self.k = cfg.k_neighbors
        self.neighbours = np.empty((n, self.k), dtype=np.int64)
        cont = data.schema.continuous_idx
        groups = [np.flatnonzero(data.is_labeled & (data.targets == c)) for c in range(data.n_known)]
        groups.append(np.flatnonzero(~data.is_labeled))
        for members in groups:
            if len(members) == 0:
                continue
            if len(members) < self.k + 1:
                raise ConfigurationError(
                    f"a neighbour pool has {len(members)} rows; k_neighbors={self.k} needs at least {self.k + 1}"
                )
            P = data.X[members][:, cont]
            sq = (P * P).sum(axis=1)
            for s in range(0, len(members), chunk):
                Q = P[s : s + chunk]
                d = (Q * Q).sum(axis=1)[:, None] + sq[None, :] - 2.0 * Q @ P.T
                d[np.arange(len(Q)), np.arange(s, s + len(Q))] = np.inf
                self.neighbours[members[s : s + chunk]] = members[np.argsort(d, axis=1, kind="stable")[:, : self.k]]

    def perturb(self, rows: np.ndarray | None = None) -> np.ndarray:
        X = self.data.X
        rows = np.arange(len(self.data)) if rows is None else np.asarray(rows)
        nbrs = self.neighbours[rows]
        pick = nbrs[np.arange(len(rows)), self.rng.integers(0, self.k, size=len(rows))]
        lam = self.rng.uniform(size=(len(rows), 1))
        out = X[rows].copy()
        cont = self.data.schema.continuous_idx
        out[:, cont] = X[rows][:, cont] + lam * (X[pick][:, cont] - X[rows][:, cont])
        for start, stop in self.data.schema.categorical_spans:
            counts = X[nbrs, start:stop].sum(axis=1)
            own = X[rows, start:stop]
            # own category wins ties; otherwise argmax takes the lowest tied index
            score = counts + 0.5 * own * (counts == counts.max(axis=1, keepdims=True))
            choice = np.argmax(score, axis=1)
            out[:, start:stop] = 0.0
            out[np.arange(len(rows)), start + choice] = 1.0
        return out
