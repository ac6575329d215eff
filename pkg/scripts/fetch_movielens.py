"""Materialize MovieLens-100K as ``data/ml-100k/u.data``.

Tries the GroupLens zip first, then falls back to the copy bundled inside the
``pytorch-widedeep`` wheel (fetched with ``pip download``; no install needed).

    python scripts/fetch_movielens.py [--out data/ml-100k/u.data]
"""

from __future__ import annotations

import argparse
import io
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from pathlib import Path

GROUPLENS_URL = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
WHEEL_MEMBER = "pytorch_widedeep/datasets/data/MovieLens100k_data.parquet.brotli"


def from_grouplens(timeout: float = 20.0) -> bytes:
    with urllib.request.urlopen(GROUPLENS_URL, timeout=timeout) as resp:
        archive = zipfile.ZipFile(io.BytesIO(resp.read()))
    return archive.read("ml-100k/u.data")


def from_wheel() -> bytes:
    import pandas as pd

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "pytorch-widedeep==1.7.0",
             "--no-deps", "-d", tmp, "-q"],
            check=True,
        )
        wheel = next(Path(tmp).glob("pytorch_widedeep-*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            frame = pd.read_parquet(io.BytesIO(zf.read(WHEEL_MEMBER)))
    cols = ["user_id", "movie_id", "rating", "timestamp"]
    lines = (f"{u}\t{i}\t{r}\t{t}" for u, i, r, t in frame[cols].itertuples(index=False))
    return ("\n".join(lines) + "\n").encode()


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path("data/ml-100k/u.data"))
    args = parser.parse_args(argv)

    try:
        payload = from_grouplens()
        source = "grouplens"
    except Exception as exc:  # network blocked or host unreachable
        print(f"grouplens download failed ({exc}); using pytorch-widedeep wheel")
        payload = from_wheel()
        source = "pytorch-widedeep wheel"

    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_bytes(payload)
    n_rows = payload.count(b"\n")
    print(f"wrote {n_rows} rows to {args.out} (source: {source})")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
