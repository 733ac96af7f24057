"""Command-line driver.

Every subcommand takes a dataset manifest (a path, or the name of a bundled
manifest such as ``satimage``) and an optional training config (a path, or
a bundled config name; by default the bundled config named after the
dataset, else the built-in defaults).  Artifacts go to ``--out``.

Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
3 data error, 4 training diverged, 5 usage error (including bad arguments).
``TABNCD_LOG_LEVEL`` (DEBUG, INFO, WARNING, ERROR; default INFO) sets the
verbosity of the log written to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

from . import __version__, pipeline
from .data import Manifest, load_manifest_split
from .errors import ConfigurationError, TabNCDError, UsageError
from .model import JointModel, TrainConfig
from .nn import load_checkpoint, save_checkpoint

log = logging.getLogger("tabncd")


def _bundled(kind: str, name: str) -> Path | None:
    p = resources.files("tabncd") / kind / f"{name}.json"
    return Path(str(p)) if p.is_file() else None


def resolve_manifest(arg: str) -> Manifest:
    p = Path(arg)
    if p.is_file():
        return Manifest.load(p)
    bundled = _bundled("manifests", arg)
    if bundled is None:
        raise ConfigurationError(f"no manifest file or bundled manifest named {arg!r}")
    m = Manifest.load(bundled)
    # bundled manifests look for data via $TABNCD_DATA_DIR or ./data
    m.base_dir = "."
    return m


def resolve_config(arg: str | None, manifest: Manifest, seed: int | None) -> TrainConfig:
    if arg is None:
        path = _bundled("configs", manifest.name)
    elif Path(arg).is_file():
        path = Path(arg)
    else:
        path = _bundled("configs", arg)
        if path is None:
            raise ConfigurationError(f"no config file or bundled config named {arg!r}")
    return TrainConfig.load(path, seed=seed)


def parse_seeds(text: str) -> list[int]:
    seeds = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-")
            seeds += range(int(lo), int(hi) + 1)
        else:
            seeds.append(int(part))
    if not seeds:
        raise ConfigurationError("empty seed list")
    return seeds


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _split(args, manifest: Manifest, cfg: TrainConfig):
    return load_manifest_split(manifest, cfg.seed if manifest.test_csv is None else None)


# ---------------------------------------------------------------- commands


def cmd_run(args, manifest, cfg) -> int:
    metrics = pipeline.run_experiment(manifest, cfg, _out(args), not args.no_checkpoints, args.debug_precision)
    for method, report in metrics.items():
        log.info("%s: acc=%.4f bacc=%.4f nmi=%.4f ari=%.4f", method, report["acc"], report["bacc"], report["nmi"], report["ari"])
    return 0


def cmd_split(args, manifest, cfg) -> int:
    out = _out(args)
    split = _split(args, manifest, cfg)
    pipeline.write_json(out / "split_summary.json", split.summary(), cfg.seed)
    with open(out / "split_rows.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row_id", "part"])
        for name, part in split.parts().items():
            w.writerows([int(r), name] for r in part.row_ids)
    return 0


def cmd_pretrain(args, manifest, cfg) -> int:
    out = _out(args)
    split = _split(args, manifest, cfg)
    encoder, history = pipeline.pretrain(split, cfg)
    pipeline.write_json(out / "config.json", {"config": cfg.to_dict(), "manifest": manifest.name}, cfg.seed)
    save_checkpoint(out / "encoder_pretrained.npz", {"encoder": encoder}, {"seed": cfg.seed})
    pipeline.write_json(out / "pretrain_log.json", {"epochs": history}, cfg.seed)
    return 0


def cmd_train(args, manifest, cfg) -> int:
    out = _out(args)
    split = _split(args, manifest, cfg)
    encoder = None
    if not args.cold_start:
        path = Path(args.encoder) if args.encoder else out / "encoder_pretrained.npz"
        if not path.is_file():
            raise UsageError(f"no pretrained encoder at {path}; run `pretrain` first or pass --cold-start")
        encoder = load_checkpoint(path)[0]["encoder"]
    trainer = pipeline.make_trainer(split, cfg, encoder, batch_precision=args.debug_precision)
    ck = out / "checkpoints"
    if not args.no_checkpoints:
        ck.mkdir(exist_ok=True)

    def on_epoch_end(epoch, model, entry):
        if not args.no_checkpoints:
            model.save(ck / f"epoch_{epoch:03d}.npz", {"seed": cfg.seed, "epoch": epoch})

    history = trainer.fit(on_epoch_end=on_epoch_end)
    trainer.model.save(out / "model.npz", {"seed": cfg.seed, "epoch": trainer.epoch})
    pipeline.write_json(out / "train_log.json", {"epochs": history}, cfg.seed)
    if args.debug_precision:
        pipeline.write_json(out / "pseudo_label_precision.json", {"batches": trainer.batch_precision}, cfg.seed)
    return 0


def cmd_eval(args, manifest, cfg) -> int:
    out = _out(args)
    split = _split(args, manifest, cfg)
    model = JointModel.load(args.model or out / "model.npz")
    report = pipeline.evaluate(model, split)
    pipeline.write_json(out / "eval_metrics.json", {"dataset": manifest.name, "metrics": {"tabularncd": report}}, cfg.seed)
    print(json.dumps({k: report[k] for k in ("acc", "bacc", "nmi", "ari")}, sort_keys=True))
    return 0


def cmd_baseline(args, manifest, cfg) -> int:
    out = _out(args)
    if args.methods:
        cfg = cfg.replace(baselines=args.methods)
    split = _split(args, manifest, cfg)
    reports = pipeline.run_baselines(split, cfg)
    pipeline.write_json(out / "baseline_metrics.json", {"dataset": manifest.name, "metrics": reports}, cfg.seed)
    for method, r in reports.items():
        print(f"{method}: acc={r['acc']:.4f} bacc={r['bacc']:.4f} nmi={r['nmi']:.4f} ari={r['ari']:.4f}")
    return 0


def cmd_export(args, manifest, cfg) -> int:
    nets, _ = load_checkpoint(args.checkpoint)
    if "encoder" not in nets:
        raise UsageError(f"{args.checkpoint} holds no encoder")
    split = _split(args, manifest, cfg)
    target = Path(args.csv)
    target.parent.mkdir(parents=True, exist_ok=True)
    n = pipeline.export_embeddings(nets["encoder"], split, target, cfg.seed, tuple(args.parts) if args.parts else None)
    log.info("wrote %d rows to %s", n, target)
    return 0


def cmd_sweep(args, manifest, cfg) -> int:
    out = _out(args)
    runs = []
    for seed in parse_seeds(args.seeds):
        log.info("seed %d", seed)
        metrics = pipeline.run_experiment(
            manifest, cfg.replace(seed=seed), out / f"seed_{seed:03d}", not args.no_checkpoints, args.debug_precision
        )
        runs.append(metrics)
    _write_aggregate(out, manifest.name, runs)
    return 0


def _write_aggregate(out: Path, name: str, runs: list[dict]) -> None:
    summary = pipeline.aggregate(runs)
    table = pipeline.format_table(name, summary)
    (out / "aggregate.json").write_text(json.dumps({"dataset": name, "runs": len(runs), "summary": summary}, indent=2, sort_keys=True) + "\n")
    (out / "table.txt").write_text(table + "\n")
    print(table)


def cmd_aggregate(args) -> int:
    runs, name = [], None
    for d in args.runs:
        files = sorted(Path(d).glob("seed_*/metrics.json")) or [Path(d) / "metrics.json"]
        for f in files:
            if not f.is_file():
                raise UsageError(f"{f} not found")
            body = json.loads(f.read_text())
            name = name or body.get("dataset", "dataset")
            runs.append(body["metrics"])
    if len(runs) < 2:
        log.warning("aggregating %d run(s); the sample std needs at least 2", len(runs))
    _write_aggregate(_out(args), name or "dataset", runs)
    return 0


COMMANDS = {
    "run": cmd_run,
    "split": cmd_split,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
    "export-embeddings": cmd_export,
    "sweep-seeds": cmd_sweep,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tabncd", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"tabncd {__version__}")
    parser.add_argument("--data-dir", help="directory holding dataset CSVs (sets TABNCD_DATA_DIR)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_required=True):
        p.add_argument("--manifest", required=True, help="manifest path or bundled name")
        p.add_argument("--config", help="config path or bundled name")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        if out_required:
            p.add_argument("--out", required=True, help="output directory")

    def training(p):
        p.add_argument("--no-checkpoints", action="store_true", help="skip per-epoch checkpoints")
        p.add_argument(
            "--debug-precision", action="store_true",
            help="write per-batch pseudo-label precision (reads hidden labels for reporting only)",
        )

    p = sub.add_parser("run", help="split, pretrain, train, evaluate, baselines")
    common(p)
    training(p)
    p = sub.add_parser("split", help="write the known/unknown split summary and row assignment")
    common(p)
    p = sub.add_parser("pretrain", help="self-supervised encoder pretraining")
    common(p)
    p = sub.add_parser("train", help="joint training from a pretrained encoder")
    common(p)
    training(p)
    p.add_argument("--encoder", help="pretrained encoder checkpoint (default: OUT/encoder_pretrained.npz)")
    p.add_argument("--cold-start", action="store_true", help="train from a randomly initialized encoder")
    p = sub.add_parser("eval", help="metrics of a trained model on the unlabeled test part")
    common(p)
    p.add_argument("--model", help="model checkpoint (default: OUT/model.npz)")
    p = sub.add_parser("baseline", help="k-means and projection baselines")
    common(p)
    p.add_argument("--methods", nargs="+", choices=["kmeans", "baseline"])
    p = sub.add_parser("export-embeddings", help="latent coordinates of every row to CSV")
    common(p, out_required=False)
    p.add_argument("--checkpoint", required=True, help="encoder or model checkpoint")
    p.add_argument("--csv", required=True, help="output CSV path")
    p.add_argument("--parts", nargs="+", choices=["labeled_train", "unlabeled_train", "labeled_test", "unlabeled_test"])
    p = sub.add_parser("sweep-seeds", help="full runs over several seeds, then mean ± std")
    common(p)
    training(p)
    p.add_argument("--seeds", default="0-9", help="e.g. 0-9 or 0,3,7 (default 0-9)")
    p = sub.add_parser("aggregate", help="mean ± std over finished run directories")
    p.add_argument("runs", nargs="+", help="run or sweep directories")
    p.add_argument("--out", required=True)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("TABNCD_LOG_LEVEL", "INFO").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        raise ConfigurationError(f"TABNCD_LOG_LEVEL must be DEBUG, INFO, WARNING or ERROR, got {level!r}")
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)


def main(argv: list[str] | None = None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        if args.data_dir:
            os.environ["TABNCD_DATA_DIR"] = args.data_dir
        if args.command == "aggregate":
            return cmd_aggregate(args)
        manifest = resolve_manifest(args.manifest)
        cfg = resolve_config(args.config, manifest, args.seed)
        return COMMANDS[args.command](args, manifest, cfg)
    except TabNCDError as exc:
        print(f"tabncd: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
