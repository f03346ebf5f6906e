"""MNIST IDX parsing and the binary 4-vs-9 dataset."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"


class IdxFormatError(ValueError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


def _header(data: bytes, n_fields: int, magic: int) -> tuple[int, ...]:
    size = 4 * n_fields
    if len(data) < size:
        raise IdxTruncatedError(f"header needs {size} bytes, got {len(data)}")
    fields = struct.unpack(f">{n_fields}I", data[:size])
    if fields[0] != magic:
        raise IdxFormatError(f"bad magic 0x{fields[0]:08x}, expected 0x{magic:08x}")
    return fields


def _payload(data: bytes, offset: int, expected: int) -> np.ndarray:
    got = len(data) - offset
    if got < expected:
        raise IdxTruncatedError(f"payload has {got} bytes, expected {expected}")
    if got > expected:
        raise IdxFormatError(f"{got - expected} trailing bytes after payload")
    return np.frombuffer(data, dtype=np.uint8, offset=offset)


def parse_idx_images(data: bytes) -> np.ndarray:
    """Decode an IDX3 image file into a ``(count, rows, cols)`` uint8 array."""
    _, count, rows, cols = _header(data, 4, IMAGE_MAGIC)
    pixels = _payload(data, 16, count * rows * cols)
    return pixels.reshape(count, rows, cols).copy()


def parse_idx_labels(data: bytes) -> np.ndarray:
    _, count = _header(data, 2, LABEL_MAGIC)
    return _payload(data, 8, count).copy()


def read_idx_file(path) -> bytes:
    """File bytes, transparently gunzipped."""
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def find_idx(data_dir, stem: str) -> Path:
    data_dir = Path(data_dir)
    for name in (stem, stem + ".gz"):
        if (data_dir / name).is_file():
            return data_dir / name
    raise FileNotFoundError(f"no {stem}[.gz] in {data_dir}")


@dataclass(frozen=True)
class LabeledDataset:
    images: np.ndarray  # (n, side*side) float64 in [0, 1]
    labels: np.ndarray  # (n,) int in {0, 1}
    side: int
    class_a: int = 4
    class_b: int = 9

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        for arr in (self.images, self.labels):
            arr.flags.writeable = False

    def __len__(self) -> int:
        return len(self.labels)

    def of_class(self, label: int) -> np.ndarray:
        return self.images[self.labels == label]

    def original_labels(self) -> np.ndarray:
        return np.where(self.labels == 1, self.class_b, self.class_a)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        return LabeledDataset(self.images[idx].copy(), self.labels[idx].copy(),
                              self.side, self.class_a, self.class_b)


def filter_and_normalize(images, labels, class_a: int = 4, class_b: int = 9) -> LabeledDataset:
    """Keep the two classes (``class_a -> 0``, ``class_b -> 1``), scale to [0, 1]."""
    if class_a == class_b:
        raise ValueError("class_a and class_b must differ")
    images = np.asarray(images)
    labels = np.asarray(labels)
    keep = (labels == class_a) | (labels == class_b)
    side = images.shape[1] if images.ndim == 3 else int(round(np.sqrt(images.shape[-1])))
    flat = images[keep].reshape(int(keep.sum()), int(np.prod(images.shape[1:]))).astype(np.float64) / 255.0
    binary = (labels[keep] == class_b).astype(np.int64)
    return LabeledDataset(flat, binary, side, class_a, class_b)


def limit(data: LabeledDataset, n: int | None, seed: int = 0) -> LabeledDataset:
    """Seeded random subset of ``n`` samples in original order; ``None`` keeps all."""
    if n is None or n >= len(data):
        return data
    idx = np.sort(np.random.default_rng(seed).choice(len(data), size=n, replace=False))
    return data.subset(idx)


def load_split(data_dir, split: str, class_a: int = 4, class_b: int = 9) -> LabeledDataset:
    stems = {"train": (TRAIN_IMAGES, TRAIN_LABELS), "test": (TEST_IMAGES, TEST_LABELS)}[split]
    images = parse_idx_images(read_idx_file(find_idx(data_dir, stems[0])))
    labels = parse_idx_labels(read_idx_file(find_idx(data_dir, stems[1])))
    if len(images) != len(labels):
        raise IdxFormatError(f"{split}: {len(images)} images but {len(labels)} labels")
    return filter_and_normalize(images, labels, class_a, class_b)
