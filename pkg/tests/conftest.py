"""Shared fixtures.

Classifier tests need MNIST-shaped IDX files.  When a real MNIST
directory is available (CCSNODE_DATA_DIR), it is used as-is.  Otherwise
a deterministic stand-in is built once per session from the bundled
scikit-learn digits images (8x8, upsampled to 28x28 and augmented with
single-pixel shifts) and written through the package's own IDX writer,
so the full file-format path is exercised either way.
"""

import os

import numpy as np
import pytest

from ccsnode.datasets import write_idx_images, write_idx_labels

DATA_DIR_ENV = "CCSNODE_DATA_DIR"

_MNIST_FILES = (
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
)


def _has_mnist(path) -> bool:
    return all(
        os.path.exists(os.path.join(path, f))
        or os.path.exists(os.path.join(path, f + ".gz"))
        for f in _MNIST_FILES
    )


def _upsample_28(batch):
    """8x8 images (values 0..16) -> uint8 28x28 (values 0..255)."""
    big = np.kron(batch, np.ones((1, 4, 4)))[:, 2:30, 2:30]
    return np.clip(big * (255.0 / 16.0), 0, 255).astype(np.uint8)


def _augment(images, labels):
    """Original plus the four single-pixel shifts of every image."""
    out = [images]
    for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        out.append(np.roll(np.roll(images, dx, axis=1), dy, axis=2))
    return np.concatenate(out), np.tile(labels, 5)


def _build_surrogate(dest):
    from sklearn.datasets import load_digits

    digits = load_digits()
    rng = np.random.default_rng(0)
    perm = rng.permutation(len(digits.images))
    # split at source-image level so train and test stay disjoint
    train_src, test_src = perm[:1500], perm[1500:]
    x_train, y_train = _augment(_upsample_28(digits.images[train_src]),
                                digits.target[train_src])
    x_test, y_test = _augment(_upsample_28(digits.images[test_src]),
                              digits.target[test_src])
    write_idx_images(os.path.join(dest, "train-images-idx3-ubyte"), x_train)
    write_idx_labels(os.path.join(dest, "train-labels-idx1-ubyte"), y_train)
    write_idx_images(os.path.join(dest, "t10k-images-idx3-ubyte"), x_test)
    write_idx_labels(os.path.join(dest, "t10k-labels-idx1-ubyte"), y_test)


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    env = os.environ.get(DATA_DIR_ENV)
    if env and _has_mnist(env):
        return env
    dest = tmp_path_factory.mktemp("mnist-surrogate")
    _build_surrogate(str(dest))
    return str(dest)
