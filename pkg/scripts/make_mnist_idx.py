"""Build gzipped IDX files from the 5000-sample MNIST subset bundled in the mlxtend wheel.

Usage: python scripts/make_mnist_idx.py [--wheel PATH] [--out data/mnist5k]

Without --wheel the script runs ``pip download mlxtend`` into a temporary dir.
The subset is sorted by label; each class is split 400/100 into train/eval after a
fixed-seed permutation, so both splits are class-balanced.
"""

import argparse
import glob
import gzip
import pathlib
import struct
import subprocess
import sys
import tempfile
import zipfile

import numpy as np

TRAIN_PER_CLASS = 400


def write_idx(path, images, labels):
    n, rows, cols = images.shape
    with gzip.GzipFile(path.with_name(path.name + "-images-idx3-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())
    with gzip.GzipFile(path.with_name(path.name + "-labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--wheel")
    parser.add_argument("--out", default="data/mnist5k")
    args = parser.parse_args()
    wheel = args.wheel
    if wheel is None:
        tmp = tempfile.mkdtemp()
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-d", tmp, "mlxtend"],
            check=True,
        )
        wheel = glob.glob(f"{tmp}/mlxtend-*.whl")[0]
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    table = np.loadtxt(gzip.decompress(raw).decode().splitlines(), delimiter=",", dtype=np.int64)
    images = table[:, :-1].reshape(-1, 28, 28)
    labels = table[:, -1]
    rng = np.random.default_rng(0)
    train_idx, eval_idx = [], []
    for c in range(10):
        idx = rng.permutation(np.flatnonzero(labels == c))
        train_idx.append(idx[:TRAIN_PER_CLASS])
        eval_idx.append(idx[TRAIN_PER_CLASS:])
    train_idx = rng.permutation(np.concatenate(train_idx))
    eval_idx = rng.permutation(np.concatenate(eval_idx))
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train", images[train_idx], labels[train_idx])
    write_idx(out / "t10k", images[eval_idx], labels[eval_idx])
    print(f"wrote {len(images)} samples to {out}")


if __name__ == "__main__":
    main()
