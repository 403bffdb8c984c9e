#!/usr/bin/env python3
"""Materialize MovieLens-100k (u.data, u.item, u.user) in the original GroupLens layout.

Tries the GroupLens zip first. When that host is unreachable, falls back to the
copy bundled in the pytorch-widedeep wheel (parquet files, same content and
row order) and rewrites it in the original text layout.

usage: tools/fetch_movielens.py [--out data/ml-100k]
"""
import argparse
import io
import math
import pathlib
import subprocess
import sys
import tempfile
import urllib.request
import zipfile

GROUPLENS_URL = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
FILES = ("u.data", "u.item", "u.user")


def from_grouplens(out: pathlib.Path) -> bool:
    try:
        blob = urllib.request.urlopen(GROUPLENS_URL, timeout=30).read()
    except Exception as exc:  # noqa: BLE001
        print(f"grouplens unavailable: {exc}", file=sys.stderr)
        return False
    with zipfile.ZipFile(io.BytesIO(blob)) as z:
        for name in FILES:
            (out / name).write_bytes(z.read(f"ml-100k/{name}"))
    return True


def from_wheel(out: pathlib.Path) -> None:
    import pandas as pd

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "--timeout", "120",
             "-d", tmp, "pytorch-widedeep==1.7.0"],
            check=True,
        )
        wheel = next(pathlib.Path(tmp).glob("pytorch_widedeep-*.whl"))
        z = zipfile.ZipFile(wheel)

        def read(part):
            raw = z.read(f"pytorch_widedeep/datasets/data/MovieLens100k_{part}.parquet.brotli")
            return pd.read_parquet(io.BytesIO(raw))

        ratings, items, users = read("data"), read("items"), read("users")

    def field(v):
        if v is None or (isinstance(v, float) and math.isnan(v)):
            return ""
        return str(v)

    with open(out / "u.data", "w") as f:
        for r in ratings.itertuples(index=False):
            f.write(f"{r.user_id}\t{r.movie_id}\t{r.rating}\t{r.timestamp}\n")
    with open(out / "u.item", "w", encoding="latin-1", errors="replace") as f:
        for r in items.itertuples(index=False):
            f.write("|".join([field(x) for x in r[:5]] + [str(int(x)) for x in r[5:]]) + "\n")
    with open(out / "u.user", "w") as f:
        for r in users.itertuples(index=False):
            f.write("|".join(map(str, r)) + "\n")


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/ml-100k")
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not from_grouplens(out):
        from_wheel(out)
    for name in FILES:
        print(out / name, sum(1 for _ in open(out / name, encoding="latin-1")), "lines")
    return 0


if __name__ == "__main__":
    sys.exit(main())
