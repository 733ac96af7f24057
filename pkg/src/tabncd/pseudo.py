"""Top-k cosine-similarity pairwise pseudo-labels.

For every anchor in a batch of latent vectors, its ``k`` most similar
peers (cosine, anchor excluded) are marked positive.  Ties go to the
lower index, so the result is deterministic.  A zero-norm vector has
similarity 0 with everything.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


class _ZeroNormCounter:
    """How many zero-norm vectors were met; a degenerate latent space shows up here."""

    def __init__(self):
        self.count = 0

    def reset(self) -> None:
        self.count = 0


zero_norm_events = _ZeroNormCounter()


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        zero_norm_events.count += 1
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def cosine_matrix(Z: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(Z, axis=1)
    zero = norms == 0
    if zero.any():
        zero_norm_events.count += int(zero.sum())
    unit = Z / np.where(zero, 1.0, norms)[:, None]
    return np.clip(unit @ unit.T, -1.0, 1.0)


@dataclass
class PseudoLabelSet:
    k: int
    relation: np.ndarray

    @property
    def b(self) -> int:
        return self.relation.shape[0]

    def precision(self, truth: np.ndarray) -> float:
        """Fraction of positive pairs whose members share a true class (evaluation only)."""
        i, j = np.nonzero(self.relation)
        return float(np.mean(truth[i] == truth[j])) if len(i) else float("nan")


def assign_pseudo_labels(Z: np.ndarray, k: int) -> PseudoLabelSet:
    Z = np.asarray(Z, dtype=float)
    b = Z.shape[0]
    if not 1 <= k <= b - 1:
        raise ConfigurationError(f"top-k must satisfy 1 <= k <= b-1 (k={k}, b={b})")
    sim = cosine_matrix(Z)
    np.fill_diagonal(sim, -np.inf)
    # stable sort keeps lower indices first among equal similarities
    top = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    relation = np.zeros((b, b), dtype=np.int8)
    np.put_along_axis(relation, top, 1, axis=1)
    return PseudoLabelSet(k, relation)
