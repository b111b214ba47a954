"""Benchmark tasks: copying, adding, and pixel-by-pixel MNIST.

The synthetic generators are pure functions of their generator state, so a
fixed seed always yields the same batch. MNIST is read from local IDX files;
nothing here touches the network.
"""

from __future__ import annotations

import gzip
import math
import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import linalg
from .activations import mse, softmax_xent

XENT_PER_STEP = "xent-per-step"
XENT_LAST = "xent-last"
MSE_LAST = "mse-last"

COPY_CLASSES = 10
COPY_BLANK = 0
COPY_MARKER = 9
COPY_LENGTH = 10

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MNIST_PIXELS = 784
MNIST_TRAIN_SIZE = 55000


@dataclass
class TaskBatch:
    inputs: np.ndarray  # (batch, T, m)
    targets: np.ndarray  # class indices (batch, T) / (batch,), or values (batch, 1)
    loss_kind: str
    T: int

    @property
    def output_mode(self) -> str:
        return "per-step" if self.loss_kind == XENT_PER_STEP else "last-step"

    def __len__(self) -> int:
        return self.inputs.shape[0]


def task_loss(outputs: np.ndarray, batch: TaskBatch) -> tuple[float, np.ndarray]:
    """Loss and its gradient with respect to the network outputs."""
    if batch.loss_kind == MSE_LAST:
        return mse(outputs, batch.targets)
    return softmax_xent(outputs, batch.targets)


def task_metric(outputs: np.ndarray, batch: TaskBatch) -> float:
    """Accuracy for classification tasks, MSE for the adding task."""
    if batch.loss_kind == MSE_LAST:
        return mse(outputs, batch.targets)[0]
    return float(np.mean(np.argmax(outputs, axis=-1) == batch.targets))


def copying_baseline(T: int) -> float:
    """Expected cross-entropy of blanks followed by 10 random guesses from 8 symbols."""
    return COPY_LENGTH * math.log(8) / (T + 20)


def gen_copying(T: int, batch: int, rng: np.random.Generator) -> TaskBatch:
    """Copy-memory batch: length ``T + 20``, marker at index ``T + 9``."""
    if T < 1:
        raise ValueError(f"T must be at least 1, got {T}")
    length = T + 2 * COPY_LENGTH
    symbols = rng.integers(1, 9, size=(batch, COPY_LENGTH))
    seq = np.zeros((batch, length), dtype=np.int64)
    seq[:, :COPY_LENGTH] = symbols
    seq[:, T + COPY_LENGTH - 1] = COPY_MARKER
    targets = np.zeros((batch, length), dtype=np.int64)
    targets[:, -COPY_LENGTH:] = symbols
    inputs = np.eye(COPY_CLASSES, dtype=linalg.get_dtype())[seq]
    return TaskBatch(inputs, targets, XENT_PER_STEP, length)


def gen_adding(T: int, batch: int, rng: np.random.Generator) -> TaskBatch:
    """Adding-problem batch with one marker in ``[1, T/2)`` and one in ``[T/2, T)``."""
    if T < 4:
        raise ValueError(f"T must be at least 4, got {T}")
    half = math.ceil(T / 2)
    values = rng.random((batch, T))
    first = rng.integers(1, half, size=batch)
    second = rng.integers(half, T, size=batch)
    markers = np.zeros((batch, T))
    rows = np.arange(batch)
    markers[rows, first] = 1.0
    markers[rows, second] = 1.0
    dtype = linalg.get_dtype()
    inputs = np.stack([values, markers], axis=-1).astype(dtype)
    targets = (inputs[rows, first, 0] + inputs[rows, second, 0]).reshape(batch, 1)
    return TaskBatch(inputs, targets, MSE_LAST, T)


class IdxFormatError(ValueError):
    pass


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path, magic: int) -> np.ndarray:
    """Read an unsigned-byte IDX file with the expected magic number."""
    with _open(path) as fh:
        data = fh.read()
    if len(data) < 4:
        raise IdxFormatError(f"{path}: truncated header")
    (found,) = struct.unpack(">I", data[:4])
    if found != magic:
        raise IdxFormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    size = int(np.prod(dims))
    if len(data) - header < size:
        raise IdxFormatError(f"{path}: truncated body, {len(data) - header} of {size} bytes")
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=header).reshape(dims)


@dataclass
class MnistDataset:
    pixels: np.ndarray  # (N, 784) uint8, row-major pixel order
    labels: np.ndarray  # (N,) uint8
    permutation: np.ndarray | None = None

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, start: int, stop: int) -> "MnistDataset":
        return replace(self, pixels=self.pixels[start:stop], labels=self.labels[start:stop])

    def batch(self, indices) -> TaskBatch:
        """Sequences of single pixels, scaled to [0, 1]."""
        px = self.pixels[indices]
        if self.permutation is not None:
            px = px[:, self.permutation]
        inputs = (px.astype(linalg.get_dtype()) / 255.0)[:, :, None]
        return TaskBatch(inputs, self.labels[indices].astype(np.int64), XENT_LAST, MNIST_PIXELS)


def load_mnist(image_path, label_path) -> MnistDataset:
    images = read_idx(image_path, IDX_IMAGES_MAGIC)
    labels = read_idx(label_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if images.shape[1] * images.shape[2] != MNIST_PIXELS:
        raise IdxFormatError(f"expected 28x28 images, got {images.shape[1]}x{images.shape[2]}")
    return MnistDataset(images.reshape(images.shape[0], MNIST_PIXELS), labels)


def fisher_yates(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    perm = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def apply_permutation(ds: MnistDataset, seed: int) -> MnistDataset:
    """Return ``ds`` with a fixed pixel permutation drawn from ``seed``."""
    return replace(ds, permutation=fisher_yates(MNIST_PIXELS, seed))


_MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _find(root: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"):
        if (root / name).exists():
            return root / name
    raise FileNotFoundError(f"no {stem}[.gz] under {root}")


def mnist_root(path=None) -> Path:
    root = path or os.environ.get("SCORNN_DATA")
    if not root:
        raise FileNotFoundError("no MNIST directory given and SCORNN_DATA is not set")
    return Path(root)


def load_mnist_splits(root=None, permute_seed: int | None = None) -> dict[str, MnistDataset]:
    """Train (first 55,000), validation (last 5,000) and the standard test set."""
    root = mnist_root(root)
    train = load_mnist(*(_find(root, s) for s in _MNIST_FILES["train"]))
    test = load_mnist(*(_find(root, s) for s in _MNIST_FILES["test"]))
    splits = {
        "train": train.subset(0, MNIST_TRAIN_SIZE),
        "valid": train.subset(MNIST_TRAIN_SIZE, len(train)),
        "test": test,
    }
    if permute_seed is not None:
        splits = {k: apply_permutation(v, permute_seed) for k, v in splits.items()}
    return splits
