"""Tabular ingestion and the known/unknown class protocol.

Continuous columns are min-max scaled with statistics from the training
rows only; categorical columns are one-hot expanded.  Rows of unknown
classes become label-hidden parts whose ground truth can only be read
through :meth:`TabularDataset.reveal_labels`, which training code never
calls.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigurationError, DataError, LabelLeakError

log = logging.getLogger(__name__)

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
TEST_CLIP = (-0.05, 1.05)


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    categories: tuple[str, ...] = ()


@dataclass(frozen=True)
class ColumnSchema:
    """Per-input-column kinds and where each lands in the encoded matrix."""

    columns: tuple[ColumnSpec, ...]

    def __post_init__(self):
        for col in self.columns:
            if col.kind not in (CONTINUOUS, CATEGORICAL):
                raise ConfigurationError(f"column {col.name!r}: unknown kind {col.kind!r}")
            if col.kind == CATEGORICAL and len(col.categories) < 2:
                raise ConfigurationError(f"categorical column {col.name!r} needs at least 2 categories")

    @property
    def width(self) -> int:
        return sum(len(c.categories) if c.kind == CATEGORICAL else 1 for c in self.columns)

    @property
    def continuous_idx(self) -> np.ndarray:
        idx, pos = [], 0
        for c in self.columns:
            if c.kind == CONTINUOUS:
                idx.append(pos)
                pos += 1
            else:
                pos += len(c.categories)
        return np.array(idx, dtype=int)

    @property
    def categorical_spans(self) -> list[tuple[int, int]]:
        """Half-open ``(start, stop)`` column ranges of each one-hot group."""
        spans, pos = [], 0
        for c in self.columns:
            if c.kind == CONTINUOUS:
                pos += 1
            else:
                spans.append((pos, pos + len(c.categories)))
                pos += len(c.categories)
        return spans

    @property
    def feature_names(self) -> list[str]:
        names = []
        for c in self.columns:
            if c.kind == CONTINUOUS:
                names.append(c.name)
            else:
                names += [f"{c.name}={v}" for v in c.categories]
        return names


@dataclass(frozen=True)
class ClassPartition:
    known: tuple[str, ...]
    unknown: tuple[str, ...]

    def __post_init__(self):
        if not self.known or not self.unknown:
            raise ConfigurationError("both known and unknown class sets must be non-empty")
        overlap = set(self.known) & set(self.unknown)
        if overlap:
            raise ConfigurationError(f"classes {sorted(overlap)} are both known and unknown")

    @property
    def classes(self) -> tuple[str, ...]:
        return self.known + self.unknown

    @property
    def n_known(self) -> int:
        return len(self.known)

    @property
    def n_unknown(self) -> int:
        return len(self.unknown)


@dataclass
class RawTable:
    """Parsed CSV before scaling: continuous floats, categorical strings, labels."""

    frame: pd.DataFrame
    labels: np.ndarray
    row_ids: np.ndarray

    def take(self, rows: np.ndarray) -> "RawTable":
        return RawTable(self.frame.iloc[rows].reset_index(drop=True), self.labels[rows], self.row_ids[rows])


@dataclass
class Preprocessor:
    """Min-max scaler plus one-hot encoder fitted on training rows."""

    schema: ColumnSchema
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, table: RawTable, kinds: dict[str, str]) -> "Preprocessor":
        specs, lo, hi = [], [], []
        for name in table.frame.columns:
            col = table.frame[name]
            if kinds[name] == CONTINUOUS:
                values = col.to_numpy(dtype=float)
                lo.append(values.min())
                hi.append(values.max())
                specs.append(ColumnSpec(name, CONTINUOUS))
            else:
                cats = tuple(sorted(col.astype(str).unique()))
                if len(cats) < 2:
                    cats = cats + ("__other__",)
                specs.append(ColumnSpec(name, CATEGORICAL, cats))
        return cls(ColumnSchema(tuple(specs)), np.array(lo, float), np.array(hi, float))

    def transform(self, table: RawTable, clip: bool = False) -> np.ndarray:
        blocks = []
        k = 0
        for spec in self.schema.columns:
            col = table.frame[spec.name]
            if spec.kind == CONTINUOUS:
                span = self.hi[k] - self.lo[k]
                values = col.to_numpy(dtype=float)
                scaled = (values - self.lo[k]) / span if span > 0 else np.zeros_like(values)
                if clip:
                    scaled = np.clip(scaled, *TEST_CLIP)
                blocks.append(scaled[:, None])
                k += 1
            else:
                values = col.astype(str).to_numpy()
                onehot = (values[:, None] == np.array(spec.categories)[None, :]).astype(float)
                unseen = int((onehot.sum(axis=1) == 0).sum())
                if unseen:
                    log.warning("column %r: %d rows with unseen categories encoded as all zeros", spec.name, unseen)
                blocks.append(onehot)
        X = np.hstack(blocks) if blocks else np.zeros((len(table.labels), 0))
        if not np.isfinite(X).all():
            raise DataError("non-finite values after preprocessing")
        return X


class TabularDataset:
    """Encoded features, integer labels and the known/unknown partition.

    ``y`` holds indices into ``partition.classes`` (known classes first).
    When ``labels_hidden`` is set, reading ``y`` raises
    :class:`LabelLeakError`; evaluation code uses :meth:`reveal_labels`.
    """

    def __init__(
        self,
        X: np.ndarray,
        y: np.ndarray,
        is_labeled: np.ndarray,
        split: str,
        schema: ColumnSchema,
        partition: ClassPartition,
        row_ids: np.ndarray,
        labels_hidden: bool = False,
    ):
        if X.shape[0] != len(y) or len(y) != len(is_labeled) or len(y) != len(row_ids):
            raise ConfigurationError("X, y, is_labeled and row_ids must have the same length")
        if X.shape[1] != schema.width:
            raise ConfigurationError(f"X has {X.shape[1]} columns, schema expects {schema.width}")
        if np.any(is_labeled & (y >= partition.n_known)):
            raise DataError("a labeled row belongs to an unknown class")
        self.X = X
        self._y = np.asarray(y, dtype=int)
        self.is_labeled = np.asarray(is_labeled, dtype=bool)
        self.split = split
        self.schema = schema
        self.partition = partition
        self.row_ids = np.asarray(row_ids)
        self.labels_hidden = labels_hidden

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def y(self) -> np.ndarray:
        if self.labels_hidden:
            raise LabelLeakError(f"labels of this {self.split} part are hidden; use reveal_labels() for evaluation")
        return self._y

    def reveal_labels(self) -> np.ndarray:
        """Ground truth for evaluation only."""
        return self._y.copy()

    def subset(self, rows: np.ndarray, **overrides) -> "TabularDataset":
        kwargs = dict(
            X=self.X[rows],
            y=self._y[rows],
            is_labeled=self.is_labeled[rows],
            split=self.split,
            schema=self.schema,
            partition=self.partition,
            row_ids=self.row_ids[rows],
            labels_hidden=self.labels_hidden,
        )
        kwargs.update(overrides)
        return TabularDataset(**kwargs)


# ------------------------------------------------------------------ loading


def read_table(
    path: str | Path,
    label_column: str,
    categorical: Sequence[str] = (),
    drop: Sequence[str] = (),
) -> tuple[RawTable, dict[str, str]]:
    """Parse a headered CSV; rows with missing values are dropped and counted."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    frame = pd.read_csv(path, dtype=str, keep_default_na=True, na_values=["?"], skipinitialspace=True, comment="#")
    return table_from_frame(frame, label_column, categorical, drop, source=str(path))


def table_from_frame(
    frame: pd.DataFrame,
    label_column: str,
    categorical: Sequence[str] = (),
    drop: Sequence[str] = (),
    source: str = "<frame>",
) -> tuple[RawTable, dict[str, str]]:
    frame = frame.copy()
    frame.columns = [str(c).strip() for c in frame.columns]
    missing_cols = [c for c in [label_column, *categorical, *drop] if c not in frame.columns]
    if missing_cols:
        raise ConfigurationError(f"{source}: columns {missing_cols} not present")
    frame = frame.drop(columns=list(drop))
    row_ids = np.arange(len(frame))
    bad = frame.isna().any(axis=1).to_numpy()
    if bad.any():
        log.warning("%s: dropped %d rows with missing values", source, int(bad.sum()))
        frame = frame.loc[~bad].reset_index(drop=True)
        row_ids = row_ids[~bad]
    labels = frame.pop(label_column).astype(str).str.strip().to_numpy()
    kinds = {c: (CATEGORICAL if c in categorical else CONTINUOUS) for c in frame.columns}
    for name, kind in kinds.items():
        if kind == CONTINUOUS:
            try:
                frame[name] = frame[name].astype(float)
            except ValueError as exc:
                raise DataError(f"{source}: column {name!r} is not numeric; declare it categorical") from exc
        else:
            frame[name] = frame[name].astype(str).str.strip()
    return RawTable(frame, labels, row_ids), kinds


def _encode_labels(labels: np.ndarray, partition: ClassPartition) -> np.ndarray:
    lookup = {c: i for i, c in enumerate(partition.classes)}
    unexpected = sorted(set(labels) - set(lookup))
    if unexpected:
        raise DataError(f"labels {unexpected[:5]} are in neither the known nor the unknown class list")
    return np.array([lookup[v] for v in labels], dtype=int)


def load_csv(
    path: str | Path,
    label_column: str,
    partition: ClassPartition | None = None,
    categorical: Sequence[str] = (),
    drop: Sequence[str] = (),
    preprocessor: Preprocessor | None = None,
    split: str = "train",
) -> TabularDataset:
    """Load and encode one CSV.

    Without a ``preprocessor`` the scaler is fitted on this file; pass the
    training file's preprocessor when loading a canonical test file.  With no
    ``partition`` every class but the last (in sorted order) counts as known.
    """
    table, kinds = read_table(path, label_column, categorical, drop)
    return _encode(table, kinds, partition, preprocessor, split, str(path))


def load_frame(
    frame: pd.DataFrame,
    label_column: str,
    partition: ClassPartition | None = None,
    categorical: Sequence[str] = (),
    split: str = "train",
) -> TabularDataset:
    """In-memory counterpart of :func:`load_csv`."""
    table, kinds = table_from_frame(frame, label_column, categorical)
    return _encode(table, kinds, partition, None, split, "<frame>")


def _encode(table, kinds, partition, preprocessor, split, source) -> TabularDataset:
    if partition is None:
        classes = tuple(sorted(set(table.labels)))
        if len(classes) < 2:
            raise DataError(f"{source}: need at least two classes")
        partition = ClassPartition(classes[:-1], classes[-1:])
    if preprocessor is None:
        preprocessor = Preprocessor.fit(table, kinds)
    X = preprocessor.transform(table, clip=split == "test")
    y = _encode_labels(table.labels, partition)
    ds = TabularDataset(X, y, y < partition.n_known, split, preprocessor.schema, partition, table.row_ids)
    ds.raw = table  # type: ignore[attr-defined]
    ds.kinds = kinds  # type: ignore[attr-defined]
    ds.preprocessor = preprocessor  # type: ignore[attr-defined]
    return ds


# ---------------------------------------------------------------- splitting


@dataclass
class NcdSplit:
    labeled_train: TabularDataset
    unlabeled_train: TabularDataset
    labeled_test: TabularDataset
    unlabeled_test: TabularDataset
    seed: int = 0

    @property
    def partition(self) -> ClassPartition:
        return self.labeled_train.partition

    @property
    def schema(self) -> ColumnSchema:
        return self.labeled_train.schema

    def parts(self) -> dict[str, TabularDataset]:
        return {
            "labeled_train": self.labeled_train,
            "unlabeled_train": self.unlabeled_train,
            "labeled_test": self.labeled_test,
            "unlabeled_test": self.unlabeled_test,
        }

    def summary(self) -> dict:
        """Counts per part and per class; reads hidden labels for reporting only."""
        out = {
            "seed": self.seed,
            "known_classes": list(self.partition.known),
            "unknown_classes": list(self.partition.unknown),
            "n_features": self.schema.width,
            "parts": {},
        }
        for name, part in self.parts().items():
            y = part.reveal_labels()
            per_class = {self.partition.classes[c]: int((y == c).sum()) for c in np.unique(y)}
            out["parts"][name] = {"n": len(part), "per_class": per_class}
        return out


def stratified_indices(y: np.ndarray, train_fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-class split whose train size totals ``floor(train_fraction * n)``.

    Class quotas use largest-remainder rounding; every class keeps at least
    one row on each side.
    """
    classes, counts = np.unique(y, return_counts=True)
    if np.any(counts < 2):
        raise DataError(f"classes {classes[counts < 2].tolist()} have fewer than 2 rows; cannot stratify")
    quota = train_fraction * counts
    take = np.floor(quota).astype(int)
    remaining = int(np.floor(train_fraction * len(y))) - take.sum()
    order = np.argsort(-(quota - take), kind="stable")
    take[order[: max(remaining, 0)]] += 1
    take = np.clip(take, 1, counts - 1)
    train, test = [], []
    for c, t in zip(classes, take):
        rows = rng.permutation(np.flatnonzero(y == c))
        train.append(rows[:t])
        test.append(rows[t:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def ncd_split(
    ds: TabularDataset,
    unknown_classes: Sequence[str],
    train_fraction: float = 0.7,
    seed: int = 0,
    test: TabularDataset | None = None,
) -> NcdSplit:
    """Hide the labels of ``unknown_classes`` and split train/test.

    ``ds`` must come from :func:`load_csv`.  With ``test`` given (a canonical
    test file) no stratified split is made.  Scaling is refitted on the
    training rows and re-applied to the test rows.
    """
    all_classes = set(ds.partition.classes)
    unknown = [str(c) for c in unknown_classes]
    if not unknown or not set(unknown) < all_classes:
        raise ConfigurationError("unknown classes must be a non-empty proper subset of the dataset's classes")
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    known = tuple(c for c in ds.partition.classes if c not in unknown)
    partition = ClassPartition(known, tuple(c for c in ds.partition.classes if c in unknown))
    raw: RawTable = ds.raw  # type: ignore[attr-defined]
    kinds: dict[str, str] = ds.kinds  # type: ignore[attr-defined]
    rng = np.random.default_rng(seed)

    if test is None:
        labels = _encode_labels(raw.labels, partition)
        tr_rows, te_rows = stratified_indices(labels, train_fraction, rng)
        raw_train, raw_test = raw.take(tr_rows), raw.take(te_rows)
    else:
        raw_train, raw_test = raw, test.raw  # type: ignore[attr-defined]
    prep = Preprocessor.fit(raw_train, kinds)

    def build(table: RawTable, split: str) -> tuple[TabularDataset, TabularDataset]:
        X = prep.transform(table, clip=split == "test")
        y = _encode_labels(table.labels, partition)
        lab = y < partition.n_known
        full = TabularDataset(X, y, lab, split, prep.schema, partition, table.row_ids)
        known_part = full.subset(np.flatnonzero(lab))
        unknown_part = full.subset(np.flatnonzero(~lab), labels_hidden=True)
        return known_part, unknown_part

    l_train, u_train = build(raw_train, "train")
    l_test, u_test = build(raw_test, "test")
    for name, part in [("labeled train", l_train), ("unlabeled train", u_train), ("unlabeled test", u_test)]:
        if len(part) == 0:
            raise DataError(f"the {name} part is empty")
    split = NcdSplit(l_train, u_train, l_test, u_test, seed)
    split.preprocessor = prep  # type: ignore[attr-defined]
    log.info("split sizes: %s", {k: len(v) for k, v in split.parts().items()})
    return split


# ----------------------------------------------------------------- training view


@dataclass
class TrainingSet:
    """What the training loops may see: features, known labels, the labeled mask.

    ``targets`` holds the known-class index for labeled rows and the
    aggregate index ``n_known`` for every unlabeled row.  Ground truth of
    unlabeled rows is not stored here.
    """

    X: np.ndarray
    targets: np.ndarray
    is_labeled: np.ndarray
    schema: ColumnSchema
    n_known: int
    n_unknown: int

    @classmethod
    def from_split(cls, split: NcdSplit) -> "TrainingSet":
        l, u = split.labeled_train, split.unlabeled_train
        X = np.vstack([l.X, u.X])
        targets = np.concatenate([l.y, np.full(len(u), split.partition.n_known)])
        is_labeled = np.concatenate([np.ones(len(l), bool), np.zeros(len(u), bool)])
        return cls(X, targets, is_labeled, split.schema, split.partition.n_known, split.partition.n_unknown)

    def __len__(self) -> int:
        return self.X.shape[0]


class Batch(NamedTuple):
    rows: np.ndarray
    X: np.ndarray
    targets: np.ndarray
    unlabeled: np.ndarray


@dataclass
class BatchSampler:
    """Shuffled mini-batches without replacement, one permutation per epoch."""

    n: int
    batch_size: int = 512
    seed: int | tuple[int, ...] = 0
    rng: np.random.Generator = field(init=False, repr=False)
    _queue: list = field(init=False, default_factory=list, repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise DataError("cannot sample from an empty dataset")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        self.rng = np.random.default_rng(self.seed)

    def epoch(self) -> list[np.ndarray]:
        perm = self.rng.permutation(self.n)
        return [perm[i : i + self.batch_size] for i in range(0, self.n, self.batch_size)]

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.epoch())

    def next_rows(self) -> np.ndarray:
        if not self._queue:
            self._queue = self.epoch()
        return self._queue.pop(0)


def make_batch(rows: np.ndarray, data: TrainingSet) -> Batch:
    return Batch(rows, data.X[rows], data.targets[rows], np.flatnonzero(~data.is_labeled[rows]))


def next_batch(sampler: BatchSampler, data: TrainingSet) -> Batch:
    return make_batch(sampler.next_rows(), data)


# ------------------------------------------------------------------ manifests


@dataclass
class Manifest:
    name: str
    csv: str
    label_column: str
    known_classes: list[str]
    unknown_classes: list[str]
    test_csv: str | None = None
    categorical_columns: list[str] = field(default_factory=list)
    drop_columns: list[str] = field(default_factory=list)
    train_fraction: float = 0.7
    seed: int = 0
    max_test_rows: int | None = None
    base_dir: str = "."

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"{path}: cannot read manifest ({exc})") from exc
        raw.pop("note", None)
        unknown_keys = set(raw) - set(cls.__dataclass_fields__)
        if unknown_keys:
            raise ConfigurationError(f"{path}: unknown manifest keys {sorted(unknown_keys)}")
        for key in ("name", "csv", "label_column", "known_classes", "unknown_classes"):
            if key not in raw:
                raise ConfigurationError(f"{path}: manifest is missing {key!r}")
        raw["known_classes"] = [str(c) for c in raw["known_classes"]]
        raw["unknown_classes"] = [str(c) for c in raw["unknown_classes"]]
        raw.setdefault("base_dir", str(path.parent))
        return cls(**raw)

    def resolve(self, name: str) -> Path:
        """Absolute path, else manifest dir, else $TABNCD_DATA_DIR, else ./data."""
        p = Path(name)
        candidates = [p] if p.is_absolute() else [Path(self.base_dir) / p]
        env = os.environ.get("TABNCD_DATA_DIR")
        if env:
            candidates.append(Path(env) / p.name)
        candidates += [Path("data") / p.name, Path(__file__).resolve().parents[2] / "data" / p.name]
        for c in candidates:
            if c.exists():
                return c
        raise DataError(f"dataset file {name!r} not found (looked in {[str(c) for c in candidates]})")

    @property
    def partition(self) -> ClassPartition:
        return ClassPartition(tuple(self.known_classes), tuple(self.unknown_classes))


def load_manifest_split(manifest: Manifest, seed: int | None = None) -> NcdSplit:
    """Read the manifest's file(s) and apply the known/unknown protocol."""
    seed = manifest.seed if seed is None else seed
    partition = manifest.partition
    kw = dict(
        label_column=manifest.label_column,
        partition=partition,
        categorical=manifest.categorical_columns,
        drop=manifest.drop_columns,
    )
    ds = load_csv(manifest.resolve(manifest.csv), **kw)
    test = None
    if manifest.test_csv:
        test = load_csv(manifest.resolve(manifest.test_csv), split="test", **kw)
        if manifest.max_test_rows and len(test) > manifest.max_test_rows:
            keep = np.sort(np.random.default_rng(seed).choice(len(test), manifest.max_test_rows, replace=False))
            test.raw = test.raw.take(keep)  # type: ignore[attr-defined]
    return ncd_split(ds, manifest.unknown_classes, manifest.train_fraction, seed, test=test)
