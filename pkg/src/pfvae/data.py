"""MNIST ingestion from IDX files.

IDX layout (big endian)::

    u32  magic            2051 for images, 2049 for labels
    u32  item count
    u32  rows, u32 cols   images only
    u8[] payload          row-major

Files ending in ``.gz`` are decompressed transparently.  Nothing is ever
downloaded.
"""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049


class IdxFormatError(ValueError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class LabelRangeError(ValueError):
    pass


class EmptyDatasetError(ValueError):
    pass


def _read_bytes(path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _header(buf: bytes, n_fields: int, magic: int, path) -> tuple[int, ...]:
    size = 4 * n_fields
    if len(buf) < size:
        raise IdxTruncatedError(f"{path}: header needs {size} bytes, file has {len(buf)}")
    fields = struct.unpack(f">{n_fields}I", buf[:size])
    if fields[0] != magic:
        raise IdxFormatError(f"{path}: bad magic {fields[0]}, expected {magic}")
    return fields[1:]


def load_idx_images(path) -> np.ndarray:
    """Return a ``uint8`` array of shape ``(N, rows * cols)``."""
    buf = _read_bytes(path)
    count, rows, cols = _header(buf, 4, IMAGE_MAGIC, path)
    need = count * rows * cols
    payload = buf[16:]
    if len(payload) < need:
        raise IdxTruncatedError(f"{path}: expected {need} pixel bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8, count=need).reshape(count, rows * cols).copy()


def load_idx_labels(path) -> np.ndarray:
    buf = _read_bytes(path)
    (count,) = _header(buf, 2, LABEL_MAGIC, path)
    payload = buf[8:]
    if len(payload) < count:
        raise IdxTruncatedError(f"{path}: expected {count} label bytes, found {len(payload)}")
    labels = np.frombuffer(payload, dtype=np.uint8, count=count).copy()
    if labels.size and labels.max() > 9:
        raise LabelRangeError(f"{path}: label {int(labels.max())} outside 0..9")
    return labels


def idx_image_bytes(images: np.ndarray, rows: int = 28, cols: int = 28) -> bytes:
    images = np.asarray(images, dtype=np.uint8).reshape(-1, rows * cols)
    return struct.pack(">4I", IMAGE_MAGIC, images.shape[0], rows, cols) + images.tobytes()


def idx_label_bytes(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1)
    return struct.pack(">2I", LABEL_MAGIC, labels.size) + labels.tobytes()


def normalize(raw: np.ndarray) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) / 255.0


def to_bytes(images: np.ndarray) -> np.ndarray:
    """Inverse of :func:`normalize` for images that came from 8-bit data."""
    return np.rint(np.asarray(images) * 255.0).astype(np.uint8)


@dataclass(frozen=True)
class MnistSet:
    images: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 2 or images.shape[0] != labels.shape[0]:
            raise ValueError(f"{images.shape[0] if images.ndim else 0} images vs {labels.shape[0]} labels")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")
        if labels.size and (labels.min() < 0 or labels.max() > 9):
            raise LabelRangeError("labels must lie in 0..9")
        if self.split not in ("train", "test"):
            raise ValueError(f"unknown split {self.split!r}")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.labels.shape[0]


def load_mnist(images_path, labels_path, split: str = "train") -> MnistSet:
    return MnistSet(normalize(load_idx_images(images_path)), load_idx_labels(labels_path), split)


def subset_indices(n_total: int, seed: int, subset: int | None) -> np.ndarray:
    """The examples that participate in training: a seeded shuffle, truncated to ``subset``."""
    order = np.random.default_rng(np.random.SeedSequence([seed, 0])).permutation(n_total)
    return order if subset is None else order[:subset]


def epoch_order(pool: np.ndarray, seed: int, epoch: int) -> np.ndarray:
    return pool[np.random.default_rng(np.random.SeedSequence([seed, 1, epoch])).permutation(pool.size)]


def iterate(
    dataset: MnistSet,
    batch_size: int = 1,
    seed: int = 0,
    subset: int | None = None,
    start: int = 0,
    epochs: int | None = None,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(images, labels)`` batches in a reproducible order.

    Each epoch is a fresh seeded permutation of the participating pool.  The
    last batch of an epoch may be short.  ``start`` skips that many batches
    so training can resume mid-stream; ``epochs=None`` streams forever.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if len(dataset) == 0:
        raise EmptyDatasetError("dataset is empty")
    pool = subset_indices(len(dataset), seed, subset)
    per_epoch = -(-pool.size // batch_size)
    epoch, offset = divmod(start, per_epoch)
    while epochs is None or epoch < epochs:
        order = epoch_order(pool, seed, epoch)
        for i in range(offset, per_epoch):
            idx = order[i * batch_size:(i + 1) * batch_size]
            yield dataset.images[idx], dataset.labels[idx]
        offset = 0
        epoch += 1


def write_bundled_subset(out_dir) -> tuple[Path, Path]:
    """Write the 5,000-image MNIST sample shipped with ``mlxtend`` as IDX files.

    Returns the image and label paths.  ``mlxtend`` is only needed here.
    """
    from mlxtend.data import mnist_data

    X, y = mnist_data()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    img_path = out / "train-images-idx3-ubyte"
    lbl_path = out / "train-labels-idx1-ubyte"
    img_path.write_bytes(idx_image_bytes(X.astype(np.uint8)))
    lbl_path.write_bytes(idx_label_bytes(y.astype(np.uint8)))
    return img_path, lbl_path
