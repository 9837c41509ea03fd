"""IDX ingestion, per-class evaluation splits, and denoising noise.

Images leave this module as float32 arrays of shape ``(N, 1, H, W)`` scaled to
``[0, 1]``; that array layout is what the rest of the package calls an image
batch.
"""
from __future__ import annotations

import enum
import gzip
import os
import struct
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .errors import (
    EmptyClassError,
    FormatError,
    InsufficientNegatives,
    TruncationError,
    UnsupportedDtype,
)

IDX_UBYTE = 0x08

IDX_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


# ---------------------------------------------------------------------------
# IDX format
# ---------------------------------------------------------------------------

def parse_idx(data: bytes) -> np.ndarray:
    """Decode an IDX byte string into a uint8 array.

    Layout: two zero bytes, a dtype byte, a rank byte, ``rank`` big-endian
    uint32 dimensions, then the row-major payload. Only unsigned bytes are
    supported.
    """
    data = bytes(data)
    if len(data) < 4:
        raise TruncationError(f"IDX header needs 4 bytes, got {len(data)}")
    if data[0] != 0 or data[1] != 0:
        raise FormatError(f"bad IDX magic {data[:4].hex()}")
    dtype, rank = data[2], data[3]
    if dtype != IDX_UBYTE:
        raise UnsupportedDtype(f"IDX dtype 0x{dtype:02x} is not unsigned byte")
    header_len = 4 + 4 * rank
    if len(data) < header_len:
        raise TruncationError("IDX dimension list is truncated")
    dims = struct.unpack(f">{rank}I", data[4:header_len])
    expected = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = len(data) - header_len
    if payload < expected:
        raise TruncationError(f"IDX payload has {payload} bytes, header declares {expected}")
    if payload > expected:
        raise FormatError(f"IDX payload has {payload - expected} trailing bytes")
    return np.frombuffer(data, dtype=np.uint8, offset=header_len).reshape(dims).copy()


def serialize_idx(array: np.ndarray) -> bytes:
    array = np.ascontiguousarray(array)
    if array.dtype != np.uint8:
        raise UnsupportedDtype(f"only uint8 arrays can be written, got {array.dtype}")
    header = bytes([0, 0, IDX_UBYTE, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    return header + array.tobytes()


def read_idx_file(path: str | os.PathLike) -> np.ndarray:
    path = os.fspath(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as f:
        return parse_idx(f.read())


# ---------------------------------------------------------------------------
# Raw datasets and splits
# ---------------------------------------------------------------------------

@dataclass
class RawDataset:
    images: np.ndarray  # (count, H, W) uint8
    labels: np.ndarray  # (count,) int
    num_classes: int = 10

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 3 or self.images.dtype != np.uint8:
            raise FormatError("images must be a rank-3 uint8 array")
        if len(self.images) != len(self.labels):
            raise FormatError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise FormatError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)


def _resolve(data_dir, name):
    for candidate in (name, name + ".gz"):
        path = os.path.join(data_dir, candidate)
        if os.path.exists(path):
            return path
    raise FileNotFoundError(os.path.join(data_dir, name))


def load_idx_dataset(data_dir: str | os.PathLike, split: str = "train") -> RawDataset:
    """Load an MNIST-layout IDX pair (also used by Fashion-MNIST) from ``data_dir``."""
    image_name, label_name = IDX_FILES[split]
    images = read_idx_file(_resolve(data_dir, image_name))
    labels = read_idx_file(_resolve(data_dir, label_name))
    if labels.ndim != 1 or len(labels) != len(images):
        raise FormatError(f"label file does not match image file ({labels.shape} vs {images.shape})")
    return RawDataset(images, labels)


class Protocol(enum.IntEnum):
    ONE = 1
    TWO = 2


@dataclass(frozen=True)
class SplitPlan:
    protocol: Protocol
    known_class: int
    seed: int = 0
    val_fraction: float = 0.1
    train_fraction: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie strictly between 0 and 1")
        object.__setattr__(self, "protocol", Protocol(self.protocol))


@dataclass
class EvalSplit:
    train: np.ndarray
    val: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray  # 1 = in-class, 0 = out-of-class
    meta: dict = field(default_factory=dict)


def to_image_batch(images: np.ndarray) -> np.ndarray:
    """uint8 (N, H, W) -> float32 (N, 1, H, W) in [0, 1]."""
    return (np.asarray(images, dtype=np.float32) / np.float32(255.0))[:, None, :, :]


def _carve(indices, fraction, rng):
    indices = rng.permutation(indices)
    n_val = int(round(fraction * len(indices)))
    if len(indices) > 1:
        n_val = min(max(n_val, 1), len(indices) - 1)
    return indices[n_val:], indices[:n_val]


def build_split(
    dataset: RawDataset,
    plan: SplitPlan,
    test_dataset: Optional[RawDataset] = None,
) -> EvalSplit:
    """Build train/val/test for one known class.

    Protocol 1 splits the known class 80/20 (validation carved from the 80)
    and balances the test set with an equal number of randomly drawn
    out-of-class images. Protocol 2 takes the known class of ``dataset`` for
    train/val and every image of ``test_dataset`` for testing.
    """
    rng = np.random.default_rng(plan.seed)
    in_idx = np.flatnonzero(dataset.labels == plan.known_class)
    if len(in_idx) == 0:
        raise EmptyClassError(f"class {plan.known_class} has no examples")

    if plan.protocol == Protocol.ONE:
        out_idx = np.flatnonzero(dataset.labels != plan.known_class)
        if len(out_idx) == 0:
            raise InsufficientNegatives("dataset contains no out-of-class examples")
        in_idx = rng.permutation(in_idx)
        n_trainval = int(round(plan.train_fraction * len(in_idx)))
        trainval, test_pos = in_idx[:n_trainval], in_idx[n_trainval:]
        if len(test_pos) == 0:
            raise EmptyClassError("known class too small to leave in-class test examples")
        if len(out_idx) < len(test_pos):
            raise InsufficientNegatives(f"need {len(test_pos)} negatives, have {len(out_idx)}")
        test_neg = rng.choice(out_idx, size=len(test_pos), replace=False)
        train_idx, val_idx = _carve(trainval, plan.val_fraction, rng)
        test_idx = np.concatenate([test_pos, test_neg])
        test_images = dataset.images[test_idx]
        test_labels = np.concatenate([np.ones(len(test_pos)), np.zeros(len(test_neg))]).astype(np.int64)
    else:
        if test_dataset is None:
            raise ValueError("Protocol 2 needs the canonical test dataset")
        train_idx, val_idx = _carve(in_idx, plan.val_fraction, rng)
        test_images = test_dataset.images
        test_labels = (test_dataset.labels == plan.known_class).astype(np.int64)
        if test_labels.min() == test_labels.max():
            raise EmptyClassError("test set must contain in-class and out-of-class examples")
        test_idx = np.arange(len(test_dataset))

    return EvalSplit(
        train=to_image_batch(dataset.images[np.sort(train_idx)]),
        val=to_image_batch(dataset.images[np.sort(val_idx)]),
        test_images=to_image_batch(test_images),
        test_labels=test_labels,
        meta={
            "protocol": int(plan.protocol),
            "known_class": plan.known_class,
            "seed": plan.seed,
            "train_indices": np.sort(train_idx),
            "val_indices": np.sort(val_idx),
            "test_indices": test_idx,
        },
    )


# ---------------------------------------------------------------------------
# Noise and batching
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    mean: float = 0.0
    variance: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("noise variance must be positive")


def inject_noise(batch: np.ndarray, spec: NoiseSpec, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Add i.i.d. Gaussian noise; the result is deliberately not clamped.

    ``rng`` lets a caller draw from a long-lived stream; otherwise a fresh
    stream is seeded from ``spec.seed``.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    noise = rng.normal(spec.mean, np.sqrt(spec.variance), size=batch.shape)
    return (batch + noise).astype(batch.dtype, copy=False)


def batches(images: np.ndarray, batch_size: int, shuffle_seed) -> Iterator[np.ndarray]:
    """Seeded shuffle followed by contiguous chunks; the short tail is kept.

    ``shuffle_seed`` may be an int or a ``numpy.random.Generator``.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    rng = shuffle_seed if isinstance(shuffle_seed, np.random.Generator) else np.random.default_rng(shuffle_seed)
    order = rng.permutation(len(images))
    for start in range(0, len(order), batch_size):
        yield images[order[start:start + batch_size]]
