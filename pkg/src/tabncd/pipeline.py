"""End-to-end runs: pretrain, joint training, evaluation, baselines, artifacts."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .baselines import kmeans_competitor, projection_baseline
from .data import Manifest, NcdSplit, TrainingSet, load_manifest_split
from .errors import ConfigurationError
from .joint import JointTrainer
from .metrics import metrics_report
from .model import JointModel, TrainConfig, build_encoder, predict_clusters
from .nn import DenseNet, save_checkpoint
from .vime import SslHeads, ssl_pretrain

log = logging.getLogger(__name__)

# independent random streams derived from the single run seed
STREAM_SSL_INIT, STREAM_SSL, STREAM_JOINT_INIT, STREAM_SAMPLER, STREAM_SMOTE = range(1, 6)


def rng_for(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


def training_X(split: NcdSplit) -> np.ndarray:
    return np.vstack([split.labeled_train.X, split.unlabeled_train.X])


def monitor_labels(split: NcdSplit) -> np.ndarray:
    """Hidden ground truth aligned with ``TrainingSet`` rows (-1 on labeled rows).

    Only feeds pseudo-label precision reporting.
    """
    n_l = len(split.labeled_train)
    return np.concatenate([np.full(n_l, -1), split.unlabeled_train.reveal_labels()])


def pretrain(split: NcdSplit, cfg: TrainConfig) -> tuple[DenseNet, list[dict]]:
    X = training_X(split)
    encoder = build_encoder(X.shape[1], cfg, rng_for(cfg.seed, STREAM_SSL_INIT))
    heads = SslHeads.build(encoder.output_dim, X.shape[1], rng_for(cfg.seed, STREAM_SSL_INIT + 100))
    return ssl_pretrain(
        encoder, heads, X, cfg.ssl_epochs, cfg.p_m, cfg.alpha, cfg.ssl_lr,
        seed=int(rng_for(cfg.seed, STREAM_SSL).integers(2**31)), batch_size=cfg.ssl_batch_size,
    )


def make_trainer(
    split: NcdSplit, cfg: TrainConfig, encoder: DenseNet | None = None, monitor: bool = True, batch_precision: bool = False
) -> JointTrainer:
    data = TrainingSet.from_split(split)
    model = JointModel.build(
        data.X.shape[1], data.n_known, data.n_unknown, cfg, rng_for(cfg.seed, STREAM_JOINT_INIT), encoder=encoder
    )
    model.pretrained = encoder is not None
    return JointTrainer(
        model, data, cfg, monitor_labels(split) if monitor else None,
        cold_start=encoder is None, record_batch_precision=batch_precision,
    )


def evaluate(model: JointModel, split: NcdSplit) -> dict:
    """Metrics on the unlabeled test part, with class names in the assignment."""
    part = split.unlabeled_test
    pred = predict_clusters(model, part.X)
    return labelled_report(split, part.reveal_labels(), pred)


def labelled_report(split: NcdSplit, y_true: np.ndarray, y_pred: np.ndarray) -> dict:
    classes = split.partition.classes
    report = metrics_report(np.array([classes[i] for i in y_true]), y_pred)
    return report


def run_baselines(split: NcdSplit, cfg: TrainConfig) -> dict:
    X = split.unlabeled_test.X
    y = split.unlabeled_test.reveal_labels()
    k = split.partition.n_unknown
    out = {}
    if "kmeans" in cfg.baselines:
        out["kmeans"] = labelled_report(split, y, kmeans_competitor(X, k, cfg))
    if "baseline" in cfg.baselines:
        out["baseline"] = labelled_report(split, y, projection_baseline(split.labeled_train, X, k, cfg))
    return out


def fit_tabncd(split: NcdSplit, cfg: TrainConfig, on_epoch_end: Callable | None = None, pretrain_encoder: bool = True):
    """Pretrain (optionally) then jointly train; returns model, ssl log, joint log."""
    encoder, ssl_log = pretrain(split, cfg) if pretrain_encoder else (None, [])
    trainer = make_trainer(split, cfg, encoder)
    history = trainer.fit(on_epoch_end=on_epoch_end)
    return trainer.model, ssl_log, history


# ------------------------------------------------------------------ artifacts


def write_json(path: Path, payload: dict, seed: int) -> None:
    body = {"seed": seed, "tabncd_version": __version__, **payload}
    path.write_text(json.dumps(body, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def export_embeddings(encoder: DenseNet, split: NcdSplit, out_csv: Path, seed: int, parts: tuple[str, ...] | None = None) -> int:
    """One row per sample: id, true class (audit only), part, latent coordinates."""
    selected = split.parts() if parts is None else {k: v for k, v in split.parts().items() if k in parts}
    classes = split.partition.classes
    rows = 0
    with open(out_csv, "w", newline="") as fh:
        fh.write(f"# seed={seed}\n")
        w = csv.writer(fh)
        w.writerow(["row_id", "true_class", "part", *[f"z{i}" for i in range(encoder.output_dim)]])
        for name, part in selected.items():
            if part.X.shape[1] != encoder.input_dim:
                raise ConfigurationError(f"encoder expects {encoder.input_dim} features, data has {part.X.shape[1]}")
            Z = encoder.forward(part.X)
            for rid, c, z in zip(part.row_ids, part.reveal_labels(), Z):
                w.writerow([int(rid), classes[c], name, *[repr(float(v)) for v in z]])
                rows += 1
    return rows


def run_experiment(
    manifest: Manifest, cfg: TrainConfig, out_dir: Path, checkpoints: bool = True, debug_precision: bool = False
) -> dict:
    """Full protocol for one seed; every artifact lands in ``out_dir``.

    ``debug_precision`` also writes per-batch pseudo-label precision, which
    reads hidden labels for reporting and never feeds back into training.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed
    write_json(out_dir / "config.json", {"config": cfg.to_dict(), "manifest": manifest.name}, seed)
    split = load_manifest_split(manifest, seed if manifest.test_csv is None else None)
    write_json(out_dir / "split_summary.json", split.summary(), seed)

    encoder, ssl_log = pretrain(split, cfg)
    save_checkpoint(out_dir / "encoder_pretrained.npz", {"encoder": encoder}, {"seed": seed})
    write_json(out_dir / "pretrain_log.json", {"epochs": ssl_log}, seed)
    export_embeddings(encoder, split, out_dir / "embeddings_pretrained.csv", seed)

    ck_dir = out_dir / "checkpoints"
    if checkpoints:
        ck_dir.mkdir(exist_ok=True)

    def on_epoch_end(epoch, model, entry):
        entry["unlabeled_test"] = {k: evaluate(model, split)[k] for k in ("acc", "bacc", "nmi", "ari")}
        if checkpoints:
            model.save(ck_dir / f"epoch_{epoch:03d}.npz", {"seed": seed, "epoch": epoch})

    trainer = make_trainer(split, cfg, encoder, batch_precision=debug_precision)
    history = trainer.fit(on_epoch_end=on_epoch_end)
    model = trainer.model
    if debug_precision:
        write_json(out_dir / "pseudo_label_precision.json", {"batches": trainer.batch_precision}, seed)
    model.save(out_dir / "model.npz", {"seed": seed, "epoch": trainer.epoch})
    write_json(out_dir / "train_log.json", {"epochs": history}, seed)
    export_embeddings(model.encoder, split, out_dir / "embeddings.csv", seed)

    metrics = {"tabularncd": evaluate(model, split), **run_baselines(split, cfg)}
    write_json(out_dir / "metrics.json", {"dataset": manifest.name, "metrics": metrics}, seed)
    return metrics


# ---------------------------------------------------------------- aggregation

METRIC_KEYS = ("bacc", "acc", "nmi", "ari")


def aggregate(runs: list[dict]) -> dict:
    """Mean and sample std per method and metric over per-seed metric dicts."""
    out = {}
    methods = sorted({m for run in runs for m in run})
    for method in methods:
        vals = {k: np.array([run[method][k] for run in runs if method in run]) for k in METRIC_KEYS}
        out[method] = {
            k: {"mean": float(v.mean()), "std": float(v.std(ddof=1)) if len(v) > 1 else 0.0, "n": int(len(v))}
            for k, v in vals.items()
        }
    return out


def format_table(dataset: str, summary: dict) -> str:
    """Rows like ``Method | BACC (%) | ACC (%) | NMI | ARI`` with mean±std."""
    order = [m for m in ("baseline", "kmeans", "tabularncd") if m in summary] + [
        m for m in summary if m not in ("baseline", "kmeans", "tabularncd")
    ]
    names = {"baseline": "Baseline", "kmeans": "k-means", "tabularncd": "TabularNCD"}
    lines = [f"{dataset}", "Method       | BACC (%)   | ACC (%)    | NMI        | ARI"]
    for m in order:
        s = summary[m]
        cells = [
            f"{100 * s['bacc']['mean']:.1f}±{100 * s['bacc']['std']:.1f}",
            f"{100 * s['acc']['mean']:.1f}±{100 * s['acc']['std']:.1f}",
            f"{s['nmi']['mean']:.2f}±{s['nmi']['std']:.2f}",
            f"{s['ari']['mean']:.2f}±{s['ari']['std']:.2f}",
        ]
        lines.append(f"{names.get(m, m):<12} | " + " | ".join(f"{c:<10}" for c in cells))
    return "\n".join(lines)
