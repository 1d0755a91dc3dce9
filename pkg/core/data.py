"""Image datasets: IDX ingestion, train/fitness split, batching, synthetic sets.

Pixels are stored as float32 in [0, 1] with NHWC layout. IDX files are the
big-endian unsigned-byte format (magic 0x00000803 for images, 0x00000801 for
labels); a ``.gz`` suffix is decompressed transparently.
"""
from __future__ import annotations

import gzip
import hashlib
import logging
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterator, Optional, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

Batch = Tuple[np.ndarray, np.ndarray]
Shuffle = Union[np.random.Generator, int, None]


class FormatError(ValueError):
    """Raised when an IDX file has a bad magic number, header or length."""


class CountMismatch(ValueError):
    """Raised when an image file and a label file disagree on the sample count."""


class SyntheticKind(str, Enum):
    SEPARABLE_BLOBS = "SEPARABLE_BLOBS"
    RECTANGLE_TOY = "RECTANGLE_TOY"


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        images = np.asarray(self.images, dtype=np.float32)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 4:
            raise ValueError(f"images must be N x H x W x C, got shape {images.shape}")
        if labels.shape != (images.shape[0],):
            raise CountMismatch(f"{images.shape[0]} images but {labels.shape[0]} labels")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "num_classes", int(self.num_classes))

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return tuple(int(dim) for dim in self.images.shape[1:])

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.images[indices], self.labels[indices], self.num_classes)

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.images).tobytes())
        digest.update(np.ascontiguousarray(self.labels).tobytes())
        digest.update(str(self.num_classes).encode())
        return digest.hexdigest()


# --- IDX ---------------------------------------------------------------------------


def _open(path: Path, mode: str):
    return gzip.open(path, mode) if path.suffix == ".gz" else open(path, mode)


def _read_idx(path: Path, magic: int, ndim: int) -> Tuple[Tuple[int, ...], np.ndarray]:
    with _open(path, "rb") as fp:
        raw = fp.read()
    header_size = 4 * (ndim + 1)
    if len(raw) < header_size:
        raise FormatError(f"{path}: file too short for an IDX header")
    found, *dims = struct.unpack(f">{ndim + 1}I", raw[:header_size])
    if found != magic:
        raise FormatError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    expected = int(np.prod(dims))
    if len(raw) - header_size != expected:
        raise FormatError(f"{path}: header announces {expected} bytes of data, found {len(raw) - header_size}")
    return tuple(dims), np.frombuffer(raw, dtype=np.uint8, offset=header_size)


def load_idx(
    images_path: Union[str, Path],
    labels_path: Union[str, Path],
    num_classes: Optional[int] = None,
) -> Dataset:
    images_path, labels_path = Path(images_path), Path(labels_path)
    (count, height, width), pixels = _read_idx(images_path, IMAGES_MAGIC, 3)
    (label_count,), labels = _read_idx(labels_path, LABELS_MAGIC, 1)
    if count != label_count:
        raise CountMismatch(f"{images_path} holds {count} images, {labels_path} holds {label_count} labels")
    labels = labels.astype(np.int64)
    classes = num_classes if num_classes is not None else int(labels.max(initial=0)) + 1
    images = pixels.reshape(count, height, width, 1).astype(np.float32) / np.float32(255.0)
    logger.info("Loaded %d images of %dx%d from %s", count, height, width, images_path)
    return Dataset(images, labels, classes)


def write_idx(dataset: Dataset, images_path: Union[str, Path], labels_path: Union[str, Path]) -> None:
    if dataset.images.shape[-1] != 1:
        raise FormatError("IDX writer supports single-channel images only")
    images_path, labels_path = Path(images_path), Path(labels_path)
    count, height, width, _ = dataset.images.shape
    pixels = np.rint(dataset.images[..., 0] * 255.0).clip(0, 255).astype(np.uint8)
    with _open(images_path, "wb") as fp:
        fp.write(struct.pack(">IIII", IMAGES_MAGIC, count, height, width))
        fp.write(pixels.tobytes())
    with _open(labels_path, "wb") as fp:
        fp.write(struct.pack(">II", LABELS_MAGIC, count))
        fp.write(dataset.labels.astype(np.uint8).tobytes())


# --- splitting and batching -----------------------------------------------------------


def split_indices(n: int, fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly between 0 and 1")
    permutation = np.random.default_rng(seed).permutation(n)
    held = int(round(fraction * n))
    if n >= 2:
        held = min(max(held, 1), n - 1)
    return np.sort(permutation[held:]), np.sort(permutation[:held])


def split_train_fitness(dataset: Dataset, fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    train_idx, fitness_idx = split_indices(len(dataset), fraction, seed)
    return dataset.subset(train_idx), dataset.subset(fitness_idx)


def batch_iter(
    dataset: Dataset,
    batch_size: int,
    shuffle: Shuffle = None,
    drop_last: bool = False,
) -> Iterator[Batch]:
    """Yield (images, labels) batches.

    Pass a Generator that outlives the epoch loop to get a fresh permutation
    each epoch; an int seeds a new stream for this call only.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(dataset)
    if shuffle is None:
        order = np.arange(n)
    else:
        rng = shuffle if isinstance(shuffle, np.random.Generator) else np.random.default_rng(shuffle)
        order = rng.permutation(n)
    stop = n - n % batch_size if drop_last else n
    for start in range(0, stop, batch_size):
        index = order[start:start + batch_size]
        yield dataset.images[index], dataset.labels[index]


# --- synthetic sets ------------------------------------------------------------------


def _blob(size: int, center: Tuple[float, float], sigma: float) -> np.ndarray:
    rows, cols = np.mgrid[0:size, 0:size]
    return np.exp(-((rows - center[0]) ** 2 + (cols - center[1]) ** 2) / (2.0 * sigma ** 2))


def _draw_segment(canvas: np.ndarray, start: np.ndarray, end: np.ndarray) -> None:
    steps = int(np.abs(end - start).max()) + 1
    rows = np.rint(np.linspace(start[0], end[0], steps)).astype(int)
    cols = np.rint(np.linspace(start[1], end[1], steps)).astype(int)
    canvas[rows, cols] = 255


def _rectangle(size: int, rng: np.random.Generator) -> np.ndarray:
    canvas = np.zeros((size, size), dtype=np.uint8)
    height = int(rng.integers(3, size + 1))
    width = int(rng.integers(3, size + 1))
    top = int(rng.integers(0, size - height + 1))
    left = int(rng.integers(0, size - width + 1))
    bottom, right = top + height - 1, left + width - 1
    canvas[top, left:right + 1] = 255
    canvas[bottom, left:right + 1] = 255
    canvas[top:bottom + 1, left] = 255
    canvas[top:bottom + 1, right] = 255
    return canvas


def _segments(size: int, rng: np.random.Generator) -> np.ndarray:
    canvas = np.zeros((size, size), dtype=np.uint8)
    for _ in range(2):
        _draw_segment(canvas, rng.integers(0, size, 2), rng.integers(0, size, 2))
    return canvas


def make_synthetic(kind: SyntheticKind, n: int, size: int, seed: int) -> Dataset:
    """Two-class desk-scale image set; labels are balanced within one sample."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if size < 4:
        raise ValueError("size must be >= 4")
    kind = SyntheticKind(kind)
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % 2)
    pixels = np.zeros((n, size, size), dtype=np.uint8)
    if kind is SyntheticKind.SEPARABLE_BLOBS:
        sigma = size / 8.0
        near, far = size / 4.0 - 0.5, 3.0 * size / 4.0 - 0.5
        templates = (_blob(size, (near, near), sigma), _blob(size, (far, far), sigma))
        for index, label in enumerate(labels):
            noisy = templates[label] + rng.normal(0.0, 0.05, (size, size))
            pixels[index] = np.rint(np.clip(noisy, 0.0, 1.0) * 255.0).astype(np.uint8)
    else:
        for index, label in enumerate(labels):
            pixels[index] = _rectangle(size, rng) if label == 1 else _segments(size, rng)
    images = pixels[..., np.newaxis].astype(np.float32) / np.float32(255.0)
    return Dataset(images, labels, num_classes=2)


__all__ = [
    "CountMismatch",
    "Dataset",
    "FormatError",
    "SyntheticKind",
    "batch_iter",
    "load_idx",
    "make_synthetic",
    "split_indices",
    "split_train_fitness",
    "write_idx",
]
