"""Write a desk-scale MNIST subset as the four standard IDX files.

The full MNIST archives are not always reachable. The mlxtend wheel ships
5000 MNIST training images (500 per digit) as ``mnist_5k.csv.gz``; this
script splits them into a seeded 80/20 train/test partition and writes
gzipped IDX files with the standard names, so every other tool in the
package treats them exactly like the real distribution.

Usage::

    pip download mlxtend --no-deps -d /tmp/wheels
    python scripts/make_mnist_subset.py /tmp/wheels/mlxtend-*.whl data/mnist-subset
"""

import argparse
import gzip
import io
import struct
import zipfile
from pathlib import Path

import numpy as np

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_csv_gz(source: Path) -> bytes:
    if source.suffix == ".whl":
        with zipfile.ZipFile(source) as zf:
            return zf.read(MEMBER)
    return source.read_bytes()


def idx_images(images: np.ndarray) -> bytes:
    n, rows, cols = images.shape
    return struct.pack(">IIII", 2051, n, rows, cols) + images.astype(np.uint8).tobytes()


def idx_labels(labels: np.ndarray) -> bytes:
    return struct.pack(">II", 2049, len(labels)) + labels.astype(np.uint8).tobytes()


def write_gz(path: Path, payload: bytes) -> None:
    # mtime=0 keeps the archives byte-identical across runs
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as gz:
        gz.write(payload)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("source", type=Path, help="mlxtend wheel or mnist_5k.csv.gz")
    parser.add_argument("out", type=Path)
    parser.add_argument("--test-fraction", type=float, default=0.2)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    table = np.loadtxt(io.StringIO(gzip.decompress(read_csv_gz(args.source)).decode()),
                       delimiter=",", dtype=np.int64)
    images = table[:, :-1].reshape(-1, 28, 28)
    labels = table[:, -1]

    order = np.random.default_rng(args.seed).permutation(len(labels))
    n_test = int(round(args.test_fraction * len(labels)))
    test_idx = np.sort(order[:n_test])
    train_idx = np.sort(order[n_test:])

    args.out.mkdir(parents=True, exist_ok=True)
    write_gz(args.out / "train-images-idx3-ubyte.gz", idx_images(images[train_idx]))
    write_gz(args.out / "train-labels-idx1-ubyte.gz", idx_labels(labels[train_idx]))
    write_gz(args.out / "t10k-images-idx3-ubyte.gz", idx_images(images[test_idx]))
    write_gz(args.out / "t10k-labels-idx1-ubyte.gz", idx_labels(labels[test_idx]))
    print(f"wrote {len(train_idx)} train / {len(test_idx)} test images to {args.out}")


if __name__ == "__main__":
    main()
