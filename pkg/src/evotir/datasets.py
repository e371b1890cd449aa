"""Dataset loading and synthesis for the classification workloads.

Supports the IDX image/label format (big-endian, magics 0x00000803 and
0x00000801, optionally gzipped), a label-first CSV format, a deterministic
synthetic 10-class digit-like generator, and two-class Gaussian blobs.

Splits carry read counters so tests can prove the holdout split is never
touched while a search is running.
"""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DatasetError(Exception):
    pass


def _open_maybe_gzip(path: str, mode: str):
    if path.endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def read_idx_images(path: str) -> np.ndarray:
    """Read an IDX3 image file into float64 (n, rows*cols) scaled to [0, 1]."""
    with _open_maybe_gzip(path, "rb") as f:
        magic, n, rows, cols = struct.unpack(">IIII", f.read(16))
        if magic != IDX_IMAGES_MAGIC:
            raise DatasetError(
                f"{path}: bad image magic 0x{magic:08x}, "
                f"expected 0x{IDX_IMAGES_MAGIC:08x}")
        raw = f.read(n * rows * cols)
    if len(raw) != n * rows * cols:
        raise DatasetError(f"{path}: truncated image data")
    data = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
    return data.reshape(n, rows * cols)


def read_idx_labels(path: str) -> np.ndarray:
    with _open_maybe_gzip(path, "rb") as f:
        magic, n = struct.unpack(">II", f.read(8))
        if magic != IDX_LABELS_MAGIC:
            raise DatasetError(
                f"{path}: bad label magic 0x{magic:08x}, "
                f"expected 0x{IDX_LABELS_MAGIC:08x}")
        raw = f.read(n)
    if len(raw) != n:
        raise DatasetError(f"{path}: truncated label data")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)


def write_idx_images(path: str, images: np.ndarray):
    """Write uint8 images of shape (n, rows, cols) in IDX3 format."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with _open_maybe_gzip(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(images.tobytes())


def write_idx_labels(path: str, labels: np.ndarray):
    labels = np.asarray(labels, dtype=np.uint8)
    with _open_maybe_gzip(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


def read_csv_dataset(path: str) -> tuple[np.ndarray, np.ndarray]:
    """CSV rows of label,pixel0,...,pixelN with pixels in 0..255."""
    table = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    labels = table[:, 0].astype(np.int64)
    return table[:, 1:] / 255.0, labels


# ---------------------------------------------------------------------------
# Synthesis
# ---------------------------------------------------------------------------

def synthetic_digits(n: int, seed: int = 7, noise: float = 0.36,
                     separation: float = 0.2, classes: int = 10,
                     side: int = 28) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic digit-like images, quantized to uint8.

    Every class prototype is one shared mostly-dark base image plus a
    small class-specific offset; `separation` scales the offset and
    `noise` the per-pixel Gaussian noise, so their ratio sets how hard
    the classes are to tell apart. Clipping keeps images sparse the way
    real digit scans are. Returns (images (n, side, side) uint8,
    labels (n,)).
    """
    rng = np.random.default_rng(seed)
    base = np.clip(rng.standard_normal(side * side), 0.0, None) * 0.25
    offsets = rng.standard_normal((classes, side * side))
    prototypes = np.clip(base[None, :] + separation * offsets, 0.0, 1.0)
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    images = prototypes[labels] + noise * rng.standard_normal((n, side * side))
    images = np.clip(images, 0.0, 1.0)
    images = np.round(images * 255.0).astype(np.uint8)
    return images.reshape(n, side, side), labels.astype(np.int64)


def gaussian_blobs(n: int, seed: int = 7, features: int = 784,
                   spread: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Two-class Gaussian fallback, already in [0, 1] feature space."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.3, 0.7, size=(2, features))
    labels = np.arange(n) % 2
    rng.shuffle(labels)
    x = centers[labels] + rng.standard_normal((n, features)) / (spread * 10.0)
    return np.clip(x, 0.0, 1.0), labels.astype(np.int64)


def write_idx_dataset(directory: str, images: np.ndarray,
                      labels: np.ndarray, prefix: str = "train"):
    """Write (images, labels) as an IDX pair with MNIST-style names."""
    os.makedirs(directory, exist_ok=True)
    write_idx_images(os.path.join(directory, f"{prefix}-images-idx3-ubyte"),
                     images)
    write_idx_labels(os.path.join(directory, f"{prefix}-labels-idx1-ubyte"),
                     labels)


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

@dataclass
class SplitView:
    """One split of a dataset. Every batch access bumps the read counter."""

    name: str
    x: np.ndarray
    labels: np.ndarray
    reads: int = 0

    def __len__(self) -> int:
        return len(self.labels)

    def whole_batches(self, batch_size: int, classes: int
                      ) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Materialize (x, one-hot y, labels) for every whole batch.
        Partial trailing batches are dropped."""
        self.reads += 1
        n = (len(self.labels) // batch_size) * batch_size
        batches = []
        for start in range(0, n, batch_size):
            xb = self.x[start:start + batch_size]
            lb = self.labels[start:start + batch_size]
            yb = np.zeros((batch_size, classes), dtype=np.float64)
            yb[np.arange(batch_size), lb] = 1.0
            batches.append((xb, yb, lb))
        return batches


@dataclass
class Dataset:
    search: SplitView
    holdout: SplitView
    features: int
    classes: int


@dataclass
class DatasetConfig:
    source: str = "synthetic"  # synthetic | idx | csv | blobs
    directory: str | None = None
    csv_path: str | None = None
    search_n: int = 1000
    holdout_n: int = 256
    noise: float = 0.36
    separation: float = 0.2
    data_seed: int = 7
    classes: int = 10
    features: int = 784


def load_dataset(config: DatasetConfig) -> Dataset:
    total = config.search_n + config.holdout_n
    if config.source == "synthetic":
        side = int(round(config.features ** 0.5))
        if side * side != config.features:
            raise DatasetError("synthetic digits need a square feature count")
        images, labels = synthetic_digits(
            total, seed=config.data_seed, noise=config.noise,
            separation=config.separation, classes=config.classes, side=side)
        x = images.reshape(total, -1).astype(np.float64) / 255.0
    elif config.source == "blobs":
        x, labels = gaussian_blobs(total, seed=config.data_seed,
                                   features=config.features)
        if config.classes != 2:
            raise DatasetError("blobs is a two-class dataset")
    elif config.source == "idx":
        if not config.directory:
            raise DatasetError("idx source needs a dataset directory")
        images_path = _find_idx_file(config.directory, "images-idx3-ubyte")
        labels_path = _find_idx_file(config.directory, "labels-idx1-ubyte")
        x = read_idx_images(images_path)
        labels = read_idx_labels(labels_path)
    elif config.source == "csv":
        if not config.csv_path:
            raise DatasetError("csv source needs csv_path")
        x, labels = read_csv_dataset(config.csv_path)
    else:
        raise DatasetError(f"unknown dataset source {config.source!r}")

    if len(labels) < total:
        raise DatasetError(
            f"dataset has {len(labels)} examples, need {total} "
            f"(search {config.search_n} + holdout {config.holdout_n})")
    if x.shape[1] != config.features:
        raise DatasetError(
            f"dataset has {x.shape[1]} features, expected {config.features}")

    search = SplitView("search", x[:config.search_n],
                       labels[:config.search_n])
    holdout = SplitView(
        "holdout", x[config.search_n:total], labels[config.search_n:total])
    return Dataset(search=search, holdout=holdout,
                   features=config.features, classes=config.classes)


def _find_idx_file(directory: str, suffix: str) -> str:
    if not os.path.isdir(directory):
        raise DatasetError(f"dataset directory not found: {directory}")
    for prefix in ("train", "t10k"):
        for ext in ("", ".gz"):
            p = os.path.join(directory, f"{prefix}-{suffix}{ext}")
            if os.path.exists(p):
                return p
    raise DatasetError(f"no *-{suffix} file in {directory}")
