"""Dataset readers (MNIST IDX, CIFAR-10 binary), synthetic control data and normalisation."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np

from .errors import BadMagic, DimensionMismatch, EmptyShape, TruncatedFile
from .model import mse_loss
from .numerics import sample_standard_normal_matrix

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3072


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.std.shape:
            raise DimensionMismatch("mean and std lengths differ")
        if np.any(self.std <= 0):
            raise ValueError("std entries must be positive")


@dataclass(frozen=True)
class Dataset:
    samples: np.ndarray
    shape: Tuple[int, ...]
    source: str
    stats: Optional[NormalizationStats] = None
    labels: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def __len__(self) -> int:
        return self.samples.shape[0]

    def subset(self, start: int, stop: Optional[int] = None) -> "Dataset":
        labels = None if self.labels is None else self.labels[start:stop]
        return replace(self, samples=self.samples[start:stop], labels=labels)

    def take(self, index) -> "Dataset":
        labels = None if self.labels is None else self.labels[index]
        return replace(self, samples=self.samples[index], labels=labels)


def _read_bytes(path) -> bytes:
    path = os.fspath(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


# -- MNIST IDX ---------------------------------------------------------------

def parse_mnist_images(buf: bytes) -> Tuple[np.ndarray, Tuple[int, int]]:
    if len(buf) < 16:
        raise TruncatedFile("IDX image header needs 16 bytes")
    magic, count, rows, cols = struct.unpack(">IIII", buf[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise BadMagic(f"IDX images magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    need = 16 + count * rows * cols
    if len(buf) < need:
        raise TruncatedFile(f"IDX image file has {len(buf)} bytes, header promises {need}")
    pixels = np.frombuffer(buf, dtype=np.uint8, count=count * rows * cols, offset=16)
    return pixels.reshape(count, rows * cols), (rows, cols)


def parse_mnist_labels(buf: bytes) -> np.ndarray:
    if len(buf) < 8:
        raise TruncatedFile("IDX label header needs 8 bytes")
    magic, count = struct.unpack(">II", buf[:8])
    if magic != IDX_LABELS_MAGIC:
        raise BadMagic(f"IDX labels magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    if len(buf) < 8 + count:
        raise TruncatedFile(f"IDX label file truncated at {len(buf)} bytes")
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=8).copy()


def load_mnist_idx(images_path, labels_path=None, limit: Optional[int] = None) -> Dataset:
    """Read an IDX image file (optionally gzipped); pixels scaled to [0, 1]."""
    raw, (rows, cols) = parse_mnist_images(_read_bytes(images_path))
    labels = None if labels_path is None else parse_mnist_labels(_read_bytes(labels_path))
    if limit is not None:
        raw = raw[:limit]
        labels = None if labels is None else labels[:limit]
    return Dataset(raw.astype(np.float64) / 255.0, (rows, cols, 1), "mnist", labels=labels)


def mnist_idx_bytes(pixels: np.ndarray, rows: int = 28, cols: int = 28) -> bytes:
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(-1, rows * cols)
    return struct.pack(">IIII", IDX_IMAGES_MAGIC, len(pixels), rows, cols) + pixels.tobytes()


def mnist_label_bytes(labels) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes()


def to_bytes_pixels(samples: np.ndarray) -> np.ndarray:
    """Inverse of the /255 scaling."""
    return np.clip(np.rint(np.asarray(samples) * 255.0), 0, 255).astype(np.uint8)


# -- CIFAR-10 binary ---------------------------------------------------------

def parse_cifar10(buf: bytes) -> Tuple[np.ndarray, np.ndarray]:
    if len(buf) == 0 or len(buf) % CIFAR_RECORD:
        raise TruncatedFile(f"CIFAR-10 batch of {len(buf)} bytes is not a positive multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    return rec[:, 1:], rec[:, 0].copy()


def load_cifar10_bin(paths: Sequence, limit: Optional[int] = None) -> Dataset:
    """Concatenate CIFAR-10 binary batches in order; pixels (R, G, B planes) scaled to [0, 1]."""
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    pix, lab = [], []
    for p in paths:
        x, y = parse_cifar10(_read_bytes(p))
        pix.append(x)
        lab.append(y)
    raw, labels = np.concatenate(pix), np.concatenate(lab)
    if limit is not None:
        raw, labels = raw[:limit], labels[:limit]
    return Dataset(raw.astype(np.float64) / 255.0, (3, 32, 32), "cifar10", labels=labels)


def cifar10_bytes(pixels: np.ndarray, labels) -> bytes:
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(-1, 3072)
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    return np.concatenate([labels, pixels], axis=1).tobytes()


# -- normalisation -----------------------------------------------------------

def compute_normalization(train: Dataset) -> NormalizationStats:
    """Per-element mean and population std over training samples; zero std becomes 1."""
    X = train.samples
    if len(X) < 2:
        raise ValueError("normalisation statistics need at least two samples")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    # float summation leaves ~1e-16 residue on constant columns; detect them exactly
    const = np.ptp(X, axis=0) == 0
    mean[const] = X[0, const]
    std[const | (std == 0)] = 1.0
    return NormalizationStats(mean, std)


def normalize_array(X, stats: NormalizationStats) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != stats.mean.shape[0]:
        raise DimensionMismatch(f"data has {X.shape[-1]} elements, stats have {stats.mean.shape[0]}")
    return (X - stats.mean) / stats.std


def denormalize_array(X, stats: NormalizationStats) -> np.ndarray:
    return np.asarray(X, dtype=np.float64) * stats.std + stats.mean


def apply_normalization(dataset: Dataset, stats: NormalizationStats) -> Dataset:
    return replace(dataset, samples=normalize_array(dataset.samples, stats), stats=stats)


def renormalized_error(outputs, targets, stats: NormalizationStats) -> float:
    """MSE after normalising both sides, so an unnormalised run can be compared with a normalised one."""
    outputs = np.asarray(outputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if outputs.shape != targets.shape:
        raise DimensionMismatch(f"shapes {outputs.shape} and {targets.shape} differ")
    return mse_loss(normalize_array(outputs, stats), normalize_array(targets, stats))


# -- synthetic controls ------------------------------------------------------

def _check_count(dim: int, count: int):
    if dim < 1 or count < 1:
        raise EmptyShape(f"dim and count must be positive, got dim={dim}, count={count}")


def generate_uniform_hypercube(dim: int, count: int, rng: np.random.Generator) -> Dataset:
    _check_count(dim, count)
    return Dataset(rng.random((count, dim)), (dim,), "uniform-hypercube")


def generate_standard_normal_dataset(dim: int, count: int, rng: np.random.Generator) -> Dataset:
    _check_count(dim, count)
    return Dataset(rng.standard_normal((count, dim)), (dim,), "standard-normal")


def iter_uniform_chunks(dim: int, count: int, rng: np.random.Generator, chunk: int = 5000) -> Iterator[np.ndarray]:
    """Same stream as :func:`generate_uniform_hypercube`, delivered in row blocks."""
    _check_count(dim, count)
    for start in range(0, count, chunk):
        yield rng.random((min(chunk, count - start), dim))


def embed_linear(dataset: Dataset, target_dim: int, rng: np.random.Generator) -> Dataset:
    """Right-multiply samples by one standard-normal ``(dim, target_dim)`` matrix (no bias)."""
    if target_dim < 1:
        raise EmptyShape("target_dim must be positive")
    M = sample_standard_normal_matrix(dataset.dim, target_dim, rng)
    return Dataset(dataset.samples @ M, (target_dim,), dataset.source + "-embedded")


# -- MNIST subset fallback ---------------------------------------------------

def export_mlxtend_mnist(directory, seed: int = 0, test_fraction: float = 0.2) -> Tuple[str, str]:
    """Write the 5000-sample MNIST subset bundled with ``mlxtend`` as IDX train/test files.

    Samples are shuffled with ``seed`` before the split because the bundled
    copy is sorted by label. Returns the two image paths.
    """
    from mlxtend.data import mnist_data  # optional dependency

    from .numerics import rng_stream

    X, y = mnist_data()
    order = rng_stream(seed, "mnist-subset-split").permutation(len(X))
    X, y = X[order].astype(np.uint8), y[order].astype(np.uint8)
    n_test = int(round(len(X) * test_fraction))
    os.makedirs(directory, exist_ok=True)
    out = []
    for name, sl in (("train", slice(n_test, None)), ("t10k", slice(0, n_test))):
        img = os.path.join(directory, f"{name}-images-idx3-ubyte")
        with open(img, "wb") as fh:
            fh.write(mnist_idx_bytes(X[sl]))
        with open(os.path.join(directory, f"{name}-labels-idx1-ubyte"), "wb") as fh:
            fh.write(mnist_label_bytes(y[sl]))
        out.append(img)
    return out[0], out[1]
