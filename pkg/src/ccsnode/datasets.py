"""Toy IVP with exact solution, MNIST IDX ingestion, and synthetic fallback."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import BadMagicError, CountMismatchError, TooFewError, TruncatedFileError
from .solvers import IvpProblem

__all__ = [
    "LabeledDataset",
    "toy_ivp",
    "toy_exact",
    "load_mnist_idx",
    "load_mnist_dir",
    "write_idx_images",
    "write_idx_labels",
    "subsample",
    "synthetic_moons",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


# --- toy problem ---

def _toy_f(t, x):
    u, v = x[0], x[1]
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return np.array([v, v * (v - 1.0) / u])


def toy_ivp() -> IvpProblem:
    """The decaying 2-d system y' = [v, v(v-1)/u], y(0) = [0.5, -3] on [0, 1]."""
    return IvpProblem(f=_toy_f, x0=np.array([0.5, -3.0]), t0=0.0, t1=1.0)


def toy_exact(t):
    """Exact solution [u, v] = [(1 + 3 e^{-8t})/8, -3 e^{-8t}]; vectorized in t."""
    t = np.asarray(t, dtype=float)
    e = np.exp(-8.0 * t)
    return np.stack([(1.0 + 3.0 * e) / 8.0, -3.0 * e], axis=-1)


# --- labeled data ---

@dataclass
class LabeledDataset:
    """Flat feature vectors in [0, 1] with integer labels, split three ways."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    y_val: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    x_test: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    y_test: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    @property
    def n_train(self) -> int:
        return len(self.y_train)


def _open_maybe_gz(path):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, count, path):
    data = fh.read(count)
    if len(data) != count:
        raise TruncatedFileError(f"{path}: expected {count} more bytes, got {len(data)}")
    return data


def load_mnist_idx(images_path, labels_path) -> LabeledDataset:
    """Parse a big-endian IDX image/label file pair into a train split.

    Pixels are scaled to [0, 1]; images must be 28x28.
    """
    with _open_maybe_gz(images_path) as fh:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, images_path))
        if magic != IMAGE_MAGIC:
            raise BadMagicError(f"{images_path}: magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")
        raw = _read_exact(fh, n * rows * cols, images_path)
    images = np.frombuffer(raw, dtype=np.uint8).reshape(n, rows * cols)
    with _open_maybe_gz(labels_path) as fh:
        magic, n_lab = struct.unpack(">II", _read_exact(fh, 8, labels_path))
        if magic != LABEL_MAGIC:
            raise BadMagicError(f"{labels_path}: magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")
        labels = np.frombuffer(_read_exact(fh, n_lab, labels_path), dtype=np.uint8)
    if n != n_lab:
        raise CountMismatchError(f"{n} images vs {n_lab} labels")
    return LabeledDataset(
        x_train=images.astype(float) / 255.0,
        y_train=labels.astype(int),
    )


def load_mnist_dir(data_dir) -> LabeledDataset:
    """Load the standard four-file MNIST layout (optionally gzipped)."""
    import os

    def find(stem):
        for suffix in ("", ".gz"):
            p = os.path.join(str(data_dir), stem + suffix)
            if os.path.exists(p):
                return p
        raise TruncatedFileError(f"missing {stem}[.gz] under {data_dir}")

    train = load_mnist_idx(find("train-images-idx3-ubyte"), find("train-labels-idx1-ubyte"))
    test = load_mnist_idx(find("t10k-images-idx3-ubyte"), find("t10k-labels-idx1-ubyte"))
    return LabeledDataset(
        x_train=train.x_train,
        y_train=train.y_train,
        x_test=test.x_train,
        y_test=test.y_train,
    )


def write_idx_images(path, images: np.ndarray) -> None:
    """Write (n, rows, cols) uint8 images in IDX format (round-trip exact)."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols))
        fh.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def subsample(data: LabeledDataset, n_train: int, seed: int) -> LabeledDataset:
    """Deterministic shuffle of the train split: first n_train kept for
    training, the remainder becomes the validation split.  Test untouched."""
    total = data.n_train
    if n_train > total:
        raise TooFewError(f"requested {n_train} train samples from {total}")
    idx = np.random.default_rng(seed).permutation(total)
    take, rest = idx[:n_train], idx[n_train:]
    return LabeledDataset(
        x_train=data.x_train[take],
        y_train=data.y_train[take],
        x_val=data.x_train[rest],
        y_val=data.y_train[rest],
        x_test=data.x_test,
        y_test=data.y_test,
    )


def synthetic_moons(n: int, noise: float, seed: int) -> LabeledDataset:
    """Two interleaved half circles with Gaussian noise (2 classes, 2 features).

    Offline fallback for classifier smoke runs when MNIST files are absent.
    """
    if n < 2:
        raise TooFewError(f"need n >= 2, got {n}")
    rng = np.random.default_rng(seed)
    n0 = (n + 1) // 2
    n1 = n - n0
    t0 = np.linspace(0.0, np.pi, n0)
    t1 = np.linspace(0.0, np.pi, n1)
    outer = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    inner = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    x = np.concatenate([outer, inner])
    y = np.concatenate([np.zeros(n0, dtype=int), np.ones(n1, dtype=int)])
    if noise > 0:
        x = x + rng.normal(scale=noise, size=x.shape)
    return LabeledDataset(x_train=x, y_train=y)
