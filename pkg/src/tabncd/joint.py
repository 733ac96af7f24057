"""Alternating training of the classification and clustering networks.

Per mini-batch two updates run with separate Adam instances that share
only the encoder:

A. the classifier (known classes + one aggregate class for every
   unlabeled row) and the encoder, on
   ``w1 * cross_entropy + (1 - w1) * consistency``;
B. the clustering head and the encoder, on the batch's unlabeled rows, on
   ``w2 * pairwise_bce + (1 - w2) * consistency``.

Consistency is the squared difference between a head's output on a row
and on its SMOTE-NC perturbation.  Pairwise targets come from top-k cosine
similarity in the current latent space and are recomputed every batch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import nn
from .augment import AugmentConfig, SmoteNC
from .data import BatchSampler, TrainingSet, make_batch
from .errors import ConfigurationError, TrainingDivergedError, UsageError
from .model import JointModel, TrainConfig
from .nn import CLAMP, DenseNet
from .pseudo import assign_pseudo_labels, PseudoLabelSet

log = logging.getLogger(__name__)


def pair_score(q_i: np.ndarray, q_j: np.ndarray) -> float:
    """Probability that two rows fall in the same cluster."""
    return float(np.dot(q_i, q_j))


def clustering_loss_and_grad(Q: np.ndarray, pseudo: PseudoLabelSet) -> tuple[float, np.ndarray]:
    """Pairwise BCE between ``Q Q^T`` and the pseudo-labels.

    Each anchor averages over its ``b - 1`` partners; anchors are then
    averaged.  Returns the loss and its gradient with respect to ``Q``.
    """
    b = Q.shape[0]
    if pseudo.b != b:
        raise ConfigurationError(f"pseudo-labels are for {pseudo.b} rows, got {b}")
    P = Q @ Q.T
    y = pseudo.relation.astype(float)
    p = np.clip(P, CLAMP, 1.0 - CLAMP)
    off = ~np.eye(b, dtype=bool)
    terms = -y * np.log(p) - (1.0 - y) * np.log(1.0 - p)
    norm = b * (b - 1)
    loss = float(terms[off].sum() / norm)
    G = (-y / p + (1.0 - y) / (1.0 - p)) / norm
    G = np.where(off & (P > CLAMP) & (P < 1.0 - CLAMP), G, 0.0)
    return loss, G @ Q + G.T @ Q


def clustering_loss(Q: np.ndarray, pseudo: PseudoLabelSet) -> float:
    return clustering_loss_and_grad(Q, pseudo)[0]


def regularization_loss(head: DenseNet, z: np.ndarray, z_bar: np.ndarray) -> float:
    return nn.mse(head.forward(z), head.forward(z_bar))


def _head_step(
    encoder: DenseNet,
    head: DenseNet,
    X: np.ndarray,
    X_bar: np.ndarray,
    main_grad: Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray]],
    w: float,
) -> tuple[float, float, list[nn.GradientTape]]:
    """Shared body of both updates: ``w * main + (1 - w) * consistency``."""
    tz = encoder.trace(X)
    tzb = encoder.trace(X_bar)
    to = head.trace(tz.output)
    tob = head.trace(tzb.output)
    main, g_main = main_grad(to.output, tz.output)
    reg = nn.mse(to.output, tob.output)
    g_reg = nn.mse_grad(to.output, tob.output)
    if not np.isfinite(main + reg):
        raise TrainingDivergedError(f"joint loss became non-finite (main={main}, reg={reg})")
    tape_h, dz = head.backward(to, w * g_main + (1.0 - w) * g_reg)
    tape_hb, dzb = head.backward(tob, -(1.0 - w) * g_reg)
    tape_e = encoder.backward(tz, dz)[0] + encoder.backward(tzb, dzb)[0]
    return main, reg, [tape_e, tape_h + tape_hb]


@dataclass
class EpochLog:
    epoch: int
    l_class: float = 0.0
    l_reg_classifier: float = 0.0
    l_clust: float = 0.0
    l_reg_cluster: float = 0.0
    loss_classification: float = 0.0
    loss_clustering: float = 0.0
    pseudo_label_precision: float | None = None
    skipped_clustering_batches: int = 0
    clipped_top_k_batches: int = 0
    batches: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class JointTrainer:
    """Owns the two optimizers, the batch sampler and the SMOTE-NC generator.

    ``monitor_labels`` (aligned with ``data`` rows) is optional ground truth
    for unlabeled rows, used only to report pseudo-label precision.
    """

    model: JointModel
    data: TrainingSet
    cfg: TrainConfig
    monitor_labels: np.ndarray | None = None
    cold_start: bool = False
    record_batch_precision: bool = False
    epoch: int = 0
    history: list[dict] = field(default_factory=list)
    batch_precision: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if not (self.model.pretrained or self.cold_start):
            raise UsageError("encoder is not pretrained; pass cold_start=True to train from random weights")
        if self.model.n_known != self.data.n_known or self.model.n_unknown != self.data.n_unknown:
            raise ConfigurationError("model heads do not match the dataset's class counts")
        n_unlabeled = int((~self.data.is_labeled).sum())
        if n_unlabeled <= self.cfg.top_k:
            raise ConfigurationError(f"top_k={self.cfg.top_k} needs more than {self.cfg.top_k} unlabeled rows")
        m = self.model
        self.opt_classification = nn.Adam([m.encoder, m.classifier], learning_rate=self.cfg.lr_classifier)
        self.opt_clustering = nn.Adam([m.encoder, m.cluster_head], learning_rate=self.cfg.lr_cluster)
        # distinct streams from the one run seed
        self.sampler = BatchSampler(len(self.data), self.cfg.batch_size, (self.cfg.seed, 4))
        self.smote = SmoteNC(self.data, AugmentConfig(self.cfg.k_neighbors, (self.cfg.seed, 5)))
        self._onehot = np.eye(self.data.n_known + 1)

    def step_classification(self, X: np.ndarray, X_bar: np.ndarray, targets: np.ndarray) -> tuple[float, float]:
        onehot = self._onehot[targets]

        def ce(out, _z):
            return nn.cross_entropy(out, onehot), nn.cross_entropy_grad(out, onehot)

        main, reg, tapes = _head_step(self.model.encoder, self.model.classifier, X, X_bar, ce, self.cfg.w1)
        self.opt_classification.step(tapes)
        return main, reg

    def step_clustering(self, X_u: np.ndarray, X_bar_u: np.ndarray, k: int) -> tuple[float, float, PseudoLabelSet]:
        holder = {}

        def pairwise(Q, z):
            holder["pseudo"] = assign_pseudo_labels(z, k)
            return clustering_loss_and_grad(Q, holder["pseudo"])

        main, reg, tapes = _head_step(self.model.encoder, self.model.cluster_head, X_u, X_bar_u, pairwise, self.cfg.w2)
        self.opt_clustering.step(tapes)
        return main, reg, holder["pseudo"]

    def train_epoch(self) -> dict:
        self.epoch += 1
        log_ = EpochLog(self.epoch)
        X_bar = self.smote.perturb()
        w1, w2 = self.cfg.w1, self.cfg.w2
        n_rows = n_unl = 0
        precisions = []
        for rows in self.sampler.epoch():
            batch = make_batch(rows, self.data)
            log_.batches += 1
            l_class, reg_a = self.step_classification(batch.X, X_bar[rows], batch.targets)
            log_.l_class += len(rows) * l_class
            log_.l_reg_classifier += len(rows) * reg_a
            n_rows += len(rows)

            u = len(batch.unlabeled)
            if u < 2:
                log_.skipped_clustering_batches += 1
                continue
            k = self.cfg.top_k
            if k > u - 1:
                k = u - 1
                log_.clipped_top_k_batches += 1
            urows = rows[batch.unlabeled]
            l_clust, reg_b, pseudo = self.step_clustering(self.data.X[urows], X_bar[urows], k)
            log_.l_clust += u * l_clust
            log_.l_reg_cluster += u * reg_b
            n_unl += u
            if self.monitor_labels is not None:
                precisions.append((u, pseudo.precision(self.monitor_labels[urows])))
                if self.record_batch_precision:
                    entry = {"epoch": self.epoch, "batch": log_.batches, "unlabeled": u, "k": k, "precision": precisions[-1][1]}
                    self.batch_precision.append(entry)
                    log.debug("pseudo-label precision %s", entry)

        log_.l_class /= max(n_rows, 1)
        log_.l_reg_classifier /= max(n_rows, 1)
        log_.l_clust /= max(n_unl, 1)
        log_.l_reg_cluster /= max(n_unl, 1)
        log_.loss_classification = w1 * log_.l_class + (1 - w1) * log_.l_reg_classifier
        log_.loss_clustering = w2 * log_.l_clust + (1 - w2) * log_.l_reg_cluster
        if precisions:
            weights, values = np.array(precisions).T
            log_.pseudo_label_precision = float(np.average(values, weights=weights))
        if log_.skipped_clustering_batches:
            log.info("epoch %d: skipped clustering step on %d batches with < 2 unlabeled rows", self.epoch, log_.skipped_clustering_batches)
        entry = log_.as_dict()
        self.history.append(entry)
        return entry

    def fit(self, epochs: int | None = None, on_epoch_end: Callable[[int, JointModel, dict], None] | None = None) -> list[dict]:
        for _ in range(self.cfg.epochs if epochs is None else epochs):
            entry = self.train_epoch()
            log.info(
                "epoch %d: L_classification=%.4f L_clustering=%.4f precision=%s",
                entry["epoch"], entry["loss_classification"], entry["loss_clustering"], entry["pseudo_label_precision"],
            )
            if on_epoch_end is not None:
                on_epoch_end(self.epoch, self.model, entry)
        return self.history


def train_epoch(trainer: JointTrainer) -> dict:
    return trainer.train_epoch()
