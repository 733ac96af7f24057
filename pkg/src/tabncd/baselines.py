"""Comparison methods run under the same protocol as the main method."""

from __future__ import annotations

import numpy as np

from . import nn
from .data import TabularDataset
from .errors import DataError
from .kmeans import kmeans
from .model import TrainConfig, build_encoder, build_head


def kmeans_competitor(X_u_test: np.ndarray, n_unknown: int, cfg: TrainConfig) -> np.ndarray:
    """k-means with k = number of unknown classes, on raw unlabeled test features."""
    return kmeans(X_u_test, n_unknown, seed=cfg.seed, max_iter=cfg.kmeans_max_iter, n_init=cfg.kmeans_restarts).labels


def train_known_classifier(labeled: TabularDataset, cfg: TrainConfig) -> tuple[nn.DenseNet, nn.DenseNet]:
    """Encoder + softmax head trained with cross-entropy on known classes only."""
    if len(labeled) == 0:
        raise DataError("the projection baseline needs labeled training rows")
    rng = np.random.default_rng(cfg.seed)
    n_known = labeled.partition.n_known
    encoder = build_encoder(labeled.X.shape[1], cfg, rng)
    head = build_head(encoder.output_dim, n_known, "softmax", cfg.head_hidden, rng)
    opt = nn.Adam([encoder, head], learning_rate=cfg.baseline_lr)
    onehot = np.eye(n_known)[labeled.y]
    n = len(labeled)
    for _ in range(cfg.baseline_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            rows = order[start : start + cfg.batch_size]
            tz = encoder.trace(labeled.X[rows])
            to = head.trace(tz.output)
            tape_h, dz = head.backward(to, nn.cross_entropy_grad(to.output, onehot[rows]))
            tape_e, _ = encoder.backward(tz, dz)
            opt.step([tape_e, tape_h])
    return encoder, head


def projection_baseline(labeled_train: TabularDataset, X_u_test: np.ndarray, n_unknown: int, cfg: TrainConfig) -> np.ndarray:
    """k-means on the penultimate layer of a classifier trained on known classes.

    The penultimate layer is the encoder output feeding the softmax layer.
    Unlabeled training rows are never used.
    """
    encoder, _ = train_known_classifier(labeled_train, cfg)
    Z = encoder.forward(X_u_test)
    return kmeans(Z, n_unknown, seed=cfg.seed, max_iter=cfg.kmeans_max_iter, n_init=cfg.kmeans_restarts).labels
