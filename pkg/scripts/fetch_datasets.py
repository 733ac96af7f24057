#!/usr/bin/env python3
"""Write the benchmark datasets as headered CSVs under ``data/``.

Satimage, Pendigits and Letter are read from the raw KEEL files bundled in
the ``keel-ds`` wheel, which keep the UCI row order (Pendigits: the first
7494 rows are the UCI training file).  Install it without its numpy pin:

    pip install --no-deps keel-ds

Human Activity Recognition, Forest Cover Type and US Census 1990 are
downloaded from the UCI repository and need network access.

Usage: python scripts/fetch_datasets.py [--out data] [names ...]
"""

from __future__ import annotations

import argparse
import csv
import gzip
import importlib.util
import io
import sys
import urllib.request
import zipfile
from pathlib import Path

UCI = "https://archive.ics.uci.edu/static/public"
HAR_URL = f"{UCI}/240/human+activity+recognition+using+smartphones.zip"
COVTYPE_URL = f"{UCI}/31/covertype.zip"
CENSUS_URL = f"{UCI}/116/us+census+data+1990.zip"
PENDIGITS_TRAIN_ROWS = 7494


def keel_rows(name: str) -> list[list[str]]:
    spec = importlib.util.find_spec("keel_ds")
    if spec is None or spec.origin is None:
        sys.exit("keel-ds is not installed: pip install --no-deps keel-ds")
    raw = Path(spec.origin).parent / "data" / "balanced" / "raw" / f"{name}.dat"
    rows = []
    for line in raw.read_text().splitlines():
        if line.strip() and not line.startswith("@"):
            rows.append([v.strip() for v in line.split(",")])
    return rows


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    print(f"wrote {path}")


def fetch(url: str) -> bytes:
    print(f"downloading {url}")
    with urllib.request.urlopen(url, timeout=120) as r:
        return r.read()


def satimage(out: Path) -> None:
    rows = keel_rows("satimage")
    write_csv(out / "satimage.csv", [f"a{i}" for i in range(36)] + ["class"], rows)


def pendigits(out: Path) -> None:
    rows = keel_rows("penbased")
    header = [f"a{i}" for i in range(16)] + ["class"]
    write_csv(out / "pendigits_train.csv", header, rows[:PENDIGITS_TRAIN_ROWS])
    write_csv(out / "pendigits_test.csv", header, rows[PENDIGITS_TRAIN_ROWS:])


def letter(out: Path) -> None:
    rows = keel_rows("letter")
    write_csv(out / "letter.csv", [f"a{i}" for i in range(16)] + ["class"], rows)


def human_activity(out: Path) -> None:
    outer = zipfile.ZipFile(io.BytesIO(fetch(HAR_URL)))
    inner_name = next((n for n in outer.namelist() if n.endswith(".zip")), None)
    z = zipfile.ZipFile(io.BytesIO(outer.read(inner_name))) if inner_name else outer
    for part in ("train", "test"):
        X = z.read(f"UCI HAR Dataset/{part}/X_{part}.txt").decode().splitlines()
        y = z.read(f"UCI HAR Dataset/{part}/y_{part}.txt").decode().split()
        rows = [line.split() + [label] for line, label in zip(X, y)]
        write_csv(out / f"human_activity_{part}.csv", [f"f{i}" for i in range(len(rows[0]) - 1)] + ["activity"], rows)


def forest_cover(out: Path) -> None:
    z = zipfile.ZipFile(io.BytesIO(fetch(COVTYPE_URL)))
    text = gzip.decompress(z.read("covtype.data.gz")).decode().splitlines()
    rows = [line.split(",") for line in text if line]
    header = [f"a{i}" for i in range(54)] + ["cover_type"]
    # canonical split: first 11340 rows train, last 565892 test
    write_csv(out / "forest_train.csv", header, rows[:11340])
    write_csv(out / "forest_test.csv", header, rows[15120:])


def census(out: Path) -> None:
    z = zipfile.ZipFile(io.BytesIO(fetch(CENSUS_URL)))
    name = next(n for n in z.namelist() if n.endswith(".txt"))
    lines = z.read(name).decode().splitlines()
    header = lines[0].split(",")
    write_csv(out / "census.csv", header, (l.split(",") for l in lines[1:] if l))


FETCHERS = {
    "satimage": satimage,
    "pendigits": pendigits,
    "letter": letter,
    "human_activity": human_activity,
    "forest_cover": forest_cover,
    "census": census,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("names", nargs="*", help=f"any of {sorted(FETCHERS)}; default: the keel-ds sets")
    parser.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "data"))
    args = parser.parse_args(argv)
    names = args.names or ["satimage", "pendigits", "letter"]
    unknown = sorted(set(names) - set(FETCHERS))
    if unknown:
        parser.error(f"unknown dataset(s): {unknown}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in names:
        FETCHERS[name](out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
