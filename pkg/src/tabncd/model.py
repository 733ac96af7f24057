"""Hyperparameters and the three networks trained jointly."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, UsageError
from .nn import DenseNet, load_checkpoint, save_checkpoint


@dataclass
class TrainConfig:
    """Every knob of a run.  Serialized flat to JSON with all defaults filled in."""

    seed: int = 0
    # architecture; None means derived from the input width
    latent_dim: int | None = None
    hidden_dim: int | None = None
    head_hidden: list[int] = field(default_factory=list)
    # self-supervised pretraining
    ssl_epochs: int = 30
    ssl_batch_size: int = 128
    ssl_lr: float = 1e-3
    p_m: float = 0.3
    alpha: float = 2.0
    # joint training
    epochs: int = 30
    batch_size: int = 512
    lr_classifier: float = 1e-3
    lr_cluster: float = 1e-3
    w1: float = 0.8
    w2: float = 0.9
    top_k: int = 5
    k_neighbors: int = 5
    # comparison methods
    baseline_epochs: int = 30
    baseline_lr: float = 1e-3
    kmeans_restarts: int = 10
    kmeans_max_iter: int = 300
    baselines: list[str] = field(default_factory=lambda: ["kmeans", "baseline"])

    def __post_init__(self):
        for name in ("w1", "w2"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be at least 2")
        if not 0.0 < self.p_m < 1.0:
            raise ConfigurationError("p_m must lie in (0, 1)")
        for name in ("top_k", "k_neighbors", "ssl_batch_size", "kmeans_restarts", "kmeans_max_iter"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        for name in ("epochs", "ssl_epochs", "baseline_epochs"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        for name in ("lr_classifier", "lr_cluster", "ssl_lr", "baseline_lr", "alpha"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        unknown = set(self.baselines) - {"kmeans", "baseline"}
        if unknown:
            raise ConfigurationError(f"unknown baselines {sorted(unknown)}")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        extra = set(raw) - names - {"note"}
        if extra:
            raise ConfigurationError(f"unknown config keys {sorted(extra)}")
        return cls(**{k: v for k, v in raw.items() if k in names})

    @classmethod
    def load(cls, path: str | Path | None, **overrides) -> "TrainConfig":
        raw = {}
        if path is not None:
            try:
                raw = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigurationError(f"{path}: cannot read config ({exc})") from exc
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def dims(self, d: int) -> tuple[int, int]:
        latent = self.latent_dim or min(d, 64)
        return latent, self.hidden_dim or 2 * latent


def build_encoder(d: int, cfg: TrainConfig, rng: np.random.Generator) -> DenseNet:
    latent, hidden = cfg.dims(d)
    return DenseNet.build([d, hidden, latent], ["relu", "identity"], rng)


def build_head(latent: int, out: int, final: str, hidden: list[int], rng: np.random.Generator) -> DenseNet:
    sizes = [latent, *hidden, out]
    return DenseNet.build(sizes, ["relu"] * len(hidden) + [final], rng)


@dataclass
class JointModel:
    encoder: DenseNet
    classifier: DenseNet
    cluster_head: DenseNet
    pretrained: bool = False

    def __post_init__(self):
        latent = self.encoder.output_dim
        if self.classifier.input_dim != latent or self.cluster_head.input_dim != latent:
            raise ConfigurationError("both heads must consume the encoder's latent dimension")
        if self.classifier.layers[-1].activation != "softmax" or self.cluster_head.layers[-1].activation != "softmax":
            raise ConfigurationError("both heads must end in softmax")

    @classmethod
    def build(cls, d: int, n_known: int, n_unknown: int, cfg: TrainConfig, rng: np.random.Generator, encoder: DenseNet | None = None) -> "JointModel":
        if encoder is None:
            encoder = build_encoder(d, cfg, rng)
        latent = encoder.output_dim
        classifier = build_head(latent, n_known + 1, "softmax", cfg.head_hidden, rng)
        cluster_head = build_head(latent, n_unknown, "softmax", cfg.head_hidden, rng)
        return cls(encoder, classifier, cluster_head)

    @property
    def n_known(self) -> int:
        return self.classifier.output_dim - 1

    @property
    def n_unknown(self) -> int:
        return self.cluster_head.output_dim

    def latent(self, X: np.ndarray) -> np.ndarray:
        return self.encoder.forward(X)

    def cluster_probabilities(self, X: np.ndarray) -> np.ndarray:
        return self.cluster_head.forward(self.encoder.forward(X))

    def nets(self) -> dict[str, DenseNet]:
        return {"encoder": self.encoder, "classifier": self.classifier, "cluster_head": self.cluster_head}

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        save_checkpoint(path, self.nets(), {"pretrained": self.pretrained, **(meta or {})})

    @classmethod
    def load(cls, path: str | Path) -> "JointModel":
        nets, meta = load_checkpoint(path)
        try:
            return cls(nets["encoder"], nets["classifier"], nets["cluster_head"], bool(meta.get("pretrained")))
        except KeyError as exc:
            raise UsageError(f"{path} is not a joint-model checkpoint (missing {exc})") from exc


def predict_clusters(model: JointModel, X_u: np.ndarray) -> np.ndarray:
    """Cluster id = argmax of the clustering head, in ``[0, n_unknown)``."""
    return np.argmax(model.cluster_probabilities(X_u), axis=1)
