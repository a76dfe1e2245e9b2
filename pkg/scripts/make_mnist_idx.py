"""Rebuild data/mnist/*.gz from the MNIST digits bundled in two public packages.

The sandbox this repository was built in had no route to the usual MNIST
mirrors, so the IDX files shipped in data/mnist/ were assembled from:

* the npm package ``mnist`` (1.1.0): 10000 digits, pixels stored as k/255
  rounded to three decimals (exactly recoverable as bytes);
* the PyPI package ``mlxtend`` (0.24.0): ``mnist_5k.csv.gz``, 5000 digits as
  raw bytes with the label in the last column.

Exact-duplicate images are dropped, the pool is shuffled with a fixed seed and
split into train / test files in standard IDX layout. Every mlxtend digit turned
out to duplicate an npm one, so the shipped pool holds 10000 distinct images.

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    pip download --no-deps mlxtend==0.24.0
    python scripts/make_mnist_idx.py --npm package --mlxtend mlxtend-0.24.0-py3-none-any.whl
"""

import argparse
import gzip
import json
import zipfile
from pathlib import Path

import numpy as np

from dibjscc.data import serialize_idx


def from_npm(root: Path):
    images, labels = [], []
    for digit in range(10):
        flat = np.array(json.loads((root / "src" / "digits" / f"{digit}.json").read_text())["data"])
        imgs = np.rint(flat.reshape(-1, 28, 28) * 255).astype(np.uint8)
        images.append(imgs)
        labels.append(np.full(len(imgs), digit, np.uint8))
    return np.concatenate(images), np.concatenate(labels)


def from_mlxtend(wheel: Path):
    with zipfile.ZipFile(wheel) as z:
        text = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz")).decode()
    rows = np.array([list(map(int, line.split(","))) for line in text.splitlines() if line])
    return rows[:, :784].reshape(-1, 28, 28).astype(np.uint8), rows[:, 784].astype(np.uint8)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--npm", type=Path, required=True, help="unpacked npm 'mnist' package dir")
    ap.add_argument("--mlxtend", type=Path, required=True, help="mlxtend wheel file")
    ap.add_argument("--out", type=Path, default=Path("data/mnist"))
    ap.add_argument("--test-size", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=20240101)
    args = ap.parse_args()

    a_img, a_lab = from_npm(args.npm)
    b_img, b_lab = from_mlxtend(args.mlxtend)
    images = np.concatenate([a_img, b_img])
    labels = np.concatenate([a_lab, b_lab])
    _, keep = np.unique(images.reshape(len(images), -1), axis=0, return_index=True)
    keep = np.sort(keep)
    images, labels = images[keep], labels[keep]
    order = np.random.default_rng(args.seed).permutation(len(images))
    images, labels = images[order], labels[order]

    n_test = args.test_size
    splits = {
        "train": (images[n_test:], labels[n_test:]),
        "t10k": (images[:n_test], labels[:n_test]),
    }
    args.out.mkdir(parents=True, exist_ok=True)
    for prefix, (imgs, labs) in splits.items():
        # mtime=0 keeps the archives byte-reproducible
        for kind, arr in (("images-idx3", imgs), ("labels-idx1", labs)):
            path = args.out / f"{prefix}-{kind}-ubyte.gz"
            with open(path, "wb") as fh, gzip.GzipFile(fileobj=fh, mode="wb", mtime=0) as gz:
                gz.write(serialize_idx(arr))
        print(f"{prefix}: {len(labs)} images, class counts {np.bincount(labs, minlength=10).tolist()}")
    print(f"dropped {len(a_img) + len(b_img) - len(keep)} duplicate images")


if __name__ == "__main__":
    main()
