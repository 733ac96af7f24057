"""Clustering scores: ACC and BACC after optimal matching, NMI, ARI."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import comb

from .errors import ConfigurationError


@dataclass
class ContingencyTable:
    counts: np.ndarray
    true_labels: np.ndarray
    pred_labels: np.ndarray

    @classmethod
    def from_labels(cls, y_true, y_pred) -> "ContingencyTable":
        y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
        if y_true.shape != y_pred.shape or y_true.ndim != 1:
            raise ConfigurationError(f"label arrays differ in shape: {y_true.shape} vs {y_pred.shape}")
        if len(y_true) == 0:
            raise ConfigurationError("need at least one label")
        t, ti = np.unique(y_true, return_inverse=True)
        p, pi = np.unique(y_pred, return_inverse=True)
        counts = np.zeros((len(t), len(p)), dtype=np.int64)
        np.add.at(counts, (ti, pi), 1)
        return cls(counts, t, p)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)


@dataclass
class Assignment:
    """Injective map from predicted cluster to true class."""

    mapping: dict
    matched: int


def hungarian_assign(table: ContingencyTable | np.ndarray) -> Assignment:
    """Maximum-weight matching of clusters (columns) to classes (rows).

    Rectangular tables are padded with zero-weight dummies; clusters
    matched to a dummy stay unmapped.  Among matchings with the same count,
    the one with the largest summed per-class recall wins, so BACC does not
    depend on how clusters happen to be numbered.
    """
    counts = table.counts if isinstance(table, ContingencyTable) else np.asarray(table)
    r, c = counts.shape
    size = max(r, c)
    padded = np.zeros((size, size), dtype=counts.dtype)
    padded[:r, :c] = counts
    recall = np.zeros((size, size))
    recall[:r, :c] = counts / np.maximum(counts.sum(axis=1, keepdims=True), 1)
    # recall sums are < r + 1, so the tie-break never outweighs one matched row
    rows, cols = linear_sum_assignment(padded + recall / (r + 1), maximize=True)
    mapping = {}
    for i, j in zip(rows, cols):
        if i < r and j < c:
            if isinstance(table, ContingencyTable):
                mapping[table.pred_labels[j].item()] = table.true_labels[i].item()
            else:
                mapping[int(j)] = int(i)
    return Assignment(mapping, int(padded[rows, cols].sum()))


def clustering_accuracy(y_true, y_pred) -> float:
    table = ContingencyTable.from_labels(y_true, y_pred)
    return hungarian_assign(table).matched / table.n


def _per_class_recall(table: ContingencyTable, assignment: Assignment) -> dict:
    recall = {}
    for i, cls in enumerate(table.true_labels):
        hits = sum(table.counts[i, j] for j, p in enumerate(table.pred_labels) if assignment.mapping.get(p.item()) == cls.item())
        recall[cls.item()] = hits / table.row_sums[i]
    return recall


def balanced_accuracy(y_true, y_pred) -> float:
    table = ContingencyTable.from_labels(y_true, y_pred)
    recall = _per_class_recall(table, hungarian_assign(table))
    return math.fsum(recall.values()) / len(recall)


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    # exactly rounded sums make the score independent of label order
    return -math.fsum(p * np.log(p))


def nmi(y_true, y_pred) -> float:
    """Mutual information over the arithmetic mean of the two entropies."""
    table = ContingencyTable.from_labels(y_true, y_pred)
    n = table.n
    hu, hv = _entropy(table.row_sums, n), _entropy(table.col_sums, n)
    if hu == 0 or hv == 0:
        return 1.0 if hu == hv == 0 else 0.0
    nz = table.counts > 0
    pij = table.counts[nz] / n
    outer = np.outer(table.row_sums, table.col_sums)[nz] / (n * n)
    mi = math.fsum(pij * np.log(pij / outer))
    return float(np.clip(mi / ((hu + hv) / 2), 0.0, 1.0))


def ari(y_true, y_pred) -> float:
    table = ContingencyTable.from_labels(y_true, y_pred)
    n = table.n
    index = comb(table.counts, 2).sum()
    sum_a = comb(table.row_sums, 2).sum()
    sum_b = comb(table.col_sums, 2).sum()
    total = comb(n, 2)
    expected = sum_a * sum_b / total if total else 0.0
    max_index = (sum_a + sum_b) / 2
    if max_index == expected:
        # both partitions trivial (all singletons or one cluster each)
        return 1.0
    return float((index - expected) / (max_index - expected))


def metrics_report(y_true, y_pred) -> dict:
    """ACC, BACC, NMI, ARI plus the matching they were computed under."""
    table = ContingencyTable.from_labels(y_true, y_pred)
    assignment = hungarian_assign(table)
    recall = _per_class_recall(table, assignment)
    return {
        "acc": assignment.matched / table.n,
        "bacc": math.fsum(recall.values()) / len(recall),
        "nmi": nmi(y_true, y_pred),
        "ari": ari(y_true, y_pred),
        "assignment": {str(k): str(v) for k, v in sorted(assignment.mapping.items(), key=lambda kv: str(kv[0]))},
        "n": table.n,
        "per_class_recall": {str(k): float(v) for k, v in recall.items()},
    }
