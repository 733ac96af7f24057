"""Self-supervised encoder pretraining by mask estimation and value imputation.

Cells are corrupted independently: with probability ``p_m`` a cell is
replaced by the same column's value from a uniformly drawn training row.
Two single-layer heads on top of the encoder then predict the mask and
reconstruct the clean input.  Labels are never read.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigurationError, TrainingDivergedError
from .nn import DenseNet

log = logging.getLogger(__name__)


@dataclass
class CorruptionBatch:
    x: np.ndarray
    mask: np.ndarray
    x_tilde: np.ndarray
    p_m: float


@dataclass
class SslHeads:
    mask_estimator: DenseNet
    reconstructor: DenseNet

    @classmethod
    def build(cls, latent: int, d: int, rng: np.random.Generator) -> "SslHeads":
        return cls(
            DenseNet.build([latent, d], ["sigmoid"], rng),
            DenseNet.build([latent, d], ["identity"], rng),
        )


def corrupt(x: np.ndarray, train_X: np.ndarray, p_m: float, rng: np.random.Generator) -> CorruptionBatch:
    if not 0.0 < p_m < 1.0:
        raise ConfigurationError(f"corruption probability must lie in (0, 1), got {p_m}")
    if train_X.shape[0] == 0:
        raise ConfigurationError("corruption needs a non-empty training set")
    mask = (rng.uniform(size=x.shape) < p_m).astype(float)
    donors = rng.integers(0, train_X.shape[0], size=x.shape)
    cols = np.broadcast_to(np.arange(x.shape[1]), x.shape)
    x_tilde = np.where(mask == 1.0, train_X[donors, cols], x)
    return CorruptionBatch(x, mask, x_tilde, p_m)


def ssl_step(encoder: DenseNet, heads: SslHeads, batch: CorruptionBatch, alpha: float, opt: nn.Adam) -> tuple[float, float]:
    """One update; returns (mask BCE, reconstruction MSE)."""
    tz = encoder.trace(batch.x_tilde)
    tm = heads.mask_estimator.trace(tz.output)
    tr = heads.reconstructor.trace(tz.output)
    mask_loss = nn.bce(tm.output, batch.mask)
    recon_loss = nn.mse(tr.output, batch.x)
    if not np.isfinite(mask_loss + alpha * recon_loss):
        raise TrainingDivergedError(f"pretraining loss became non-finite (mask={mask_loss}, recon={recon_loss})")
    tape_m, dz_m = heads.mask_estimator.backward(tm, nn.bce_grad(tm.output, batch.mask))
    tape_r, dz_r = heads.reconstructor.backward(tr, alpha * nn.mse_grad(tr.output, batch.x))
    tape_e, _ = encoder.backward(tz, dz_m + dz_r)
    opt.step([tape_e, tape_m, tape_r])
    return mask_loss, recon_loss


def ssl_pretrain(
    encoder: DenseNet,
    heads: SslHeads,
    train_X: np.ndarray,
    epochs: int = 30,
    p_m: float = 0.3,
    alpha: float = 2.0,
    lr: float = 1e-3,
    seed: int = 0,
    batch_size: int = 128,
) -> tuple[DenseNet, list[dict]]:
    """Train ``encoder`` and ``heads`` in place; returns the encoder and per-epoch losses."""
    if encoder.input_dim != train_X.shape[1]:
        raise ConfigurationError(f"encoder expects {encoder.input_dim} features, data has {train_X.shape[1]}")
    rng = np.random.default_rng(seed)
    opt = nn.Adam([encoder, heads.mask_estimator, heads.reconstructor], learning_rate=lr)
    history = []
    n = train_X.shape[0]
    for epoch in range(1, epochs + 1):
        perm = rng.permutation(n)
        sums = np.zeros(2)
        for start in range(0, n, batch_size):
            rows = perm[start : start + batch_size]
            batch = corrupt(train_X[rows], train_X, p_m, rng)
            m, r = ssl_step(encoder, heads, batch, alpha, opt)
            sums += len(rows) * np.array([m, r])
        mask_loss, recon_loss = sums / n
        history.append(
            {"epoch": epoch, "loss": mask_loss + alpha * recon_loss, "mask_bce": mask_loss, "reconstruction_mse": recon_loss}
        )
        log.debug("ssl epoch %d: %s", epoch, history[-1])
    return encoder, history
