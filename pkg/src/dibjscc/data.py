"""MNIST IDX ingestion and the colored-MNIST construction.

Each grayscale digit is tinted with one of ten palette colors chosen uniformly
at random; the color index is the private label, the digit is kept alongside
for probe analysis only.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

NUM_COLORS = 10
IMAGE_SHAPE = (28, 28, 3)
PIXELS = 28 * 28 * 3

PALETTE = np.array([
    (1.0, 0.0, 0.0),
    (0.0, 1.0, 0.0),
    (0.0, 0.0, 1.0),
    (1.0, 1.0, 0.0),
    (1.0, 0.0, 1.0),
    (0.0, 1.0, 1.0),
    (1.0, 1.0, 1.0),
    (1.0, 0.5, 0.0),
    (0.5, 0.0, 1.0),
    (0.0, 0.5, 0.5),
], dtype=np.float32)


class IDXFormatError(ValueError):
    pass


class IDXLengthError(IDXFormatError):
    pass


def parse_idx(blob: bytes) -> np.ndarray:
    """Decode an IDX images (0x803) or labels (0x801) file.

    Images come back as uint8 ``[count, rows, cols]``; labels as uint8 ``[count]``.
    Gzip-compressed input is accepted transparently.
    """
    if blob[:2] == b"\x1f\x8b":
        blob = gzip.decompress(blob)
    if len(blob) < 8:
        raise IDXFormatError(f"IDX header truncated: {len(blob)} bytes")
    (magic,) = struct.unpack_from(">I", blob, 0)
    if magic == IMAGES_MAGIC:
        if len(blob) < 16:
            raise IDXLengthError(f"IDX images header needs 16 bytes, got {len(blob)}")
        count, rows, cols = struct.unpack_from(">III", blob, 4)
        shape, offset = (count, rows, cols), 16
    elif magic == LABELS_MAGIC:
        (count,) = struct.unpack_from(">I", blob, 4)
        shape, offset = (count,), 8
    else:
        raise IDXFormatError(f"unrecognised IDX magic 0x{magic:08X}")
    expected = int(np.prod(shape))
    actual = len(blob) - offset
    if actual < expected:
        raise IDXLengthError(f"IDX payload truncated: expected {expected} bytes, got {actual}")
    return np.frombuffer(blob, dtype=np.uint8, count=expected, offset=offset).reshape(shape).copy()


def serialize_idx(arr: np.ndarray) -> bytes:
    """Inverse of :func:`parse_idx` for uint8 label vectors or image stacks."""
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise TypeError(f"IDX payload must be uint8, got {arr.dtype}")
    if arr.ndim == 1:
        header = struct.pack(">II", LABELS_MAGIC, arr.shape[0])
    elif arr.ndim == 3:
        header = struct.pack(">IIII", IMAGES_MAGIC, *arr.shape)
    else:
        raise ValueError(f"IDX serialization supports rank 1 or 3, got shape {arr.shape}")
    return header + np.ascontiguousarray(arr).tobytes()


def read_idx(path) -> np.ndarray:
    return parse_idx(Path(path).read_bytes())


@dataclass(frozen=True)
class RawMnist:
    images: np.ndarray  # uint8 [n, 28, 28]
    labels: np.ndarray  # uint8 [n]

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    def head(self, n: int | None) -> "RawMnist":
        if n is None or n >= len(self):
            return self
        return RawMnist(self.images[:n], self.labels[:n])


def load_mnist(images_path, labels_path, limit: int | None = None) -> RawMnist:
    return RawMnist(read_idx(images_path), read_idx(labels_path)).head(limit)


def colorize(gray: np.ndarray, color_index: int, palette: np.ndarray = PALETTE) -> np.ndarray:
    """Tint a [28, 28] grayscale image; returns [2352] floats in [0, 1], (row, col, channel) order."""
    if not 0 <= color_index < len(palette):
        raise IndexError(f"color index {color_index} outside palette of size {len(palette)}")
    g = np.asarray(gray, dtype=np.float32) / 255.0
    return (g[..., None] * palette[color_index]).reshape(-1)


@dataclass(frozen=True)
class ColoredSample:
    pixels: np.ndarray
    private_label: np.ndarray
    digit_label: int


@dataclass(frozen=True)
class ColoredDataset:
    """Column-oriented storage of colored samples.

    ``pixels`` [n, 2352] float32, ``private`` [n, 10] one-hot float32 (color),
    ``colors`` and ``digits`` [n] int64.
    """

    pixels: np.ndarray
    private: np.ndarray
    colors: np.ndarray
    digits: np.ndarray

    def __len__(self) -> int:
        return len(self.colors)

    def __getitem__(self, i: int) -> ColoredSample:
        return ColoredSample(self.pixels[i], self.private[i], int(self.digits[i]))

    def __iter__(self) -> Iterator[ColoredSample]:
        return (self[i] for i in range(len(self)))

    def subset(self, idx) -> "ColoredDataset":
        return ColoredDataset(self.pixels[idx], self.private[idx], self.colors[idx], self.digits[idx])


def build_colored_mnist(raw: RawMnist, seed, palette: np.ndarray = PALETTE) -> ColoredDataset:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = len(raw)
    colors = rng.integers(0, len(palette), size=n)
    g = raw.images.astype(np.float32) / 255.0
    pixels = (g[..., None] * palette[colors][:, None, None, :]).reshape(n, -1)
    private = np.eye(len(palette), dtype=np.float32)[colors]
    return ColoredDataset(pixels.astype(np.float32), private, colors.astype(np.int64),
                          raw.labels.astype(np.int64))


def batch_iter(dataset, batch_size: int, seed=None, shuffle: bool = True):
    """Yield ``(X, S, idx)`` batches covering one epoch; the last batch may be short.

    ``seed`` may be an int or a ``Generator``; passing the same Generator over
    successive epochs gives a fresh permutation each epoch.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("batch_iter: empty dataset")
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    if shuffle:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        order = rng.permutation(n)
    else:
        order = np.arange(n)
    for lo in range(0, n, batch_size):
        idx = order[lo:lo + batch_size]
        yield dataset.pixels[idx], dataset.private[idx], idx


@dataclass(frozen=True)
class Splits:
    train: ColoredDataset
    test: ColoredDataset


def load_colored_splits(train_images, train_labels, test_images, test_labels,
                        train_limit: int | None, test_limit: int | None,
                        train_seed, test_seed) -> Splits:
    """Both splits are colorized independently with their own seeds."""
    train = build_colored_mnist(load_mnist(train_images, train_labels, train_limit), train_seed)
    test = build_colored_mnist(load_mnist(test_images, test_labels, test_limit), test_seed)
    return Splits(train, test)


def images_to_uint8(pixels: np.ndarray) -> np.ndarray:
    """[n, 2352] floats in [0, 1] -> [n, 28, 28, 3] uint8 via scale-by-255-and-round."""
    return np.clip(np.rint(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8).reshape(-1, *IMAGE_SHAPE)
