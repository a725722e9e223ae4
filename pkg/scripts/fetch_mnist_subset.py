"""Write a stratified 4,000/1,000 MNIST subset as gzip IDX files.

    python scripts/fetch_mnist_subset.py [--out data/mnist5k] [--seed 0]

The source is the 5,000-image MNIST sample bundled with ``mlxtend``
(``pip install smcda[mnist]``), 500 images per digit. Each class is split
400/100 into train/test with a fixed permutation, so the output bytes are
identical on every machine. Files written::

    train-images-idx3-ubyte.gz  train-labels-idx1-ubyte.gz
    t10k-images-idx3-ubyte.gz   t10k-labels-idx1-ubyte.gz
    SHA256SUMS
"""

import argparse
import hashlib
from pathlib import Path

import numpy as np

from smcda.data import Dataset, write_idx

TRAIN_PER_CLASS = 400
FILES = ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz",
         "t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz")


def split(labels, seed):
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        train.append(idx[:TRAIN_PER_CLASS])
        test.append(idx[TRAIN_PER_CLASS:])
    # interleave classes so a head() of either file stays roughly balanced
    return rng.permutation(np.concatenate(train)), rng.permutation(np.concatenate(test))


def fetch(out, seed=0):
    from mlxtend.data import mnist_data

    X, y = mnist_data()
    train, test = split(y, seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f for f in FILES]
    for (img, lab), idx in (((paths[0], paths[1]), train), ((paths[2], paths[3]), test)):
        write_idx(Dataset(X[idx] / 255.0, y[idx], image_shape=(28, 28)), img, lab)
    sums = "".join(f"{hashlib.sha256(p.read_bytes()).hexdigest()}  {p.name}\n" for p in paths)
    (out / "SHA256SUMS").write_text(sums)
    return paths


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/mnist5k")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for p in fetch(args.out, args.seed):
        print(p)


if __name__ == "__main__":
    main()
