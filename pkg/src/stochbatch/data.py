"""Datasets, stratified subsampling and per-epoch universal batches."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .seeding import stream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        n = self.labels.shape[0]
        if n < 1:
            raise DatasetError("dataset must hold at least one example")
        if self.inputs.shape[0] != n:
            raise DatasetError(f"{self.inputs.shape[0]} inputs but {n} labels")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise DatasetError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def sample_shape(self) -> tuple:
        return tuple(self.inputs.shape[1:])

    def take(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.inputs[index], self.labels[index], self.num_classes)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class BatchPlan:
    seed: int
    epoch: int
    batch_size: int
    batches: tuple

    def __len__(self):
        return len(self.batches)

    def __iter__(self):
        return iter(self.batches)


def make_blobs(n, num_classes, dim, separation, seed) -> Dataset:
    """Isotropic unit-variance Gaussian clusters.

    Centers sit on scaled coordinate axes (random unit directions when there
    are more classes than dimensions) so that every pair of centers is
    `separation` apart in the axis-aligned case.
    """
    if num_classes < 2 or dim < 1 or n < num_classes:
        raise DatasetError(f"need n >= classes >= 2 and dim >= 1, got n={n}, classes={num_classes}, dim={dim}")
    if not separation > 0:
        raise DatasetError("separation must be positive")
    rng = np.random.default_rng(seed)
    if num_classes <= dim:
        centers = np.zeros((num_classes, dim))
        centers[np.arange(num_classes), np.arange(num_classes)] = separation / np.sqrt(2.0)
    else:
        d = rng.standard_normal((num_classes, dim))
        centers = d / np.linalg.norm(d, axis=1, keepdims=True) * separation / np.sqrt(2.0)
    labels = rng.permutation(np.arange(n) % num_classes)
    inputs = centers[labels] + rng.standard_normal((n, dim))
    return Dataset(inputs, labels.astype(np.int64), num_classes)


# --- IDX -----------------------------------------------------------------


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, expected_magic: int, path) -> np.ndarray:
    if len(raw) < 4:
        raise DatasetError(f"{path}: truncated header (got {len(raw)} bytes, need 4)")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DatasetError(f"{path}: bad magic number 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DatasetError(f"{path}: truncated header (got {len(raw)} bytes, need {header})")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) < header + size:
        raise DatasetError(
            f"{path}: truncated payload: bytes {header}..{header + size} expected, file ends at byte {len(raw)}"
        )
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path, num_classes: int = 10) -> Dataset:
    """Read an IDX image/label pair (optionally gzip-compressed).

    Pixels are scaled to [0, 1] and given a channel axis: (n, 1, rows, cols).
    """
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, images_path)
    labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DatasetError(f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    inputs = images.astype(np.float64)[:, None, :, :] / 255.0
    return Dataset(inputs, labels.astype(np.int64), num_classes)


def write_idx(path, array: np.ndarray):
    """Write a uint8 array as IDX (gzip-compressed if the name ends in .gz)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    raw = struct.pack(f">I{array.ndim}I", magic, *array.shape) + array.tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        raw = gzip.compress(raw, mtime=0)
    path.write_bytes(raw)


def load_csv(path, num_classes=None) -> Dataset:
    """CSV with header ``label,feature_0,feature_1,...``."""
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    if header[0] != "label" or any(h != f"feature_{i}" for i, h in enumerate(header[1:])):
        raise DatasetError(f"{path}: header must be label,feature_0,...")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    labels = table[:, 0].astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    return Dataset(table[:, 1:].astype(np.float64), labels, int(num_classes))


# --- splitting ----------------------------------------------------------


def _stratified_indices(labels, num_classes, total, rng) -> np.ndarray:
    counts = np.bincount(labels, minlength=num_classes)
    n = labels.shape[0]
    exact = counts * total / n
    quota = np.floor(exact).astype(np.int64)
    remainder = total - quota.sum()
    order = sorted(range(num_classes), key=lambda c: (-(exact[c] - quota[c]), c))
    for c in order[:remainder]:
        quota[c] += 1
    picked = []
    for c in range(num_classes):
        members = np.flatnonzero(labels == c)
        if counts[c] and quota[c] == 0:
            raise DatasetError(f"class {c} has zero survivors")
        picked.append(rng.choice(members, size=quota[c], replace=False))
    return np.sort(np.concatenate(picked))


def subsample(dataset: Dataset, fraction: float, seed) -> Dataset:
    """Stratified draw of floor(fraction * n) examples without replacement.

    Selected examples keep their original relative order.
    """
    if not 0 < fraction <= 1:
        raise DatasetError(f"fraction must be in (0, 1], got {fraction}")
    n = len(dataset)
    if fraction == 1:
        return dataset.take(np.arange(n))
    total = int(np.floor(fraction * n))
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    return dataset.take(_stratified_indices(dataset.labels, dataset.num_classes, total, rng))


def split_holdout(dataset: Dataset, holdout, seed) -> tuple[Dataset, Dataset]:
    """Stratified (train, validation) split; `holdout` is a count or a fraction."""
    n = len(dataset)
    k = int(holdout if holdout >= 1 else round(holdout * n))
    if not 0 < k < n:
        raise DatasetError(f"holdout size {k} invalid for n={n}")
    rng = np.random.default_rng(seed)
    val = _stratified_indices(dataset.labels, dataset.num_classes, k, rng)
    train = np.setdiff1d(np.arange(n), val)
    return dataset.take(train), dataset.take(val)


def normalize(train: Dataset, *others: Dataset) -> list[Dataset]:
    """Per-channel standardization using statistics of `train` only.

    For flat inputs every feature is treated as a channel.
    """
    x = train.inputs
    axes = (0, 2, 3) if x.ndim == 4 else (0,)
    mean = x.mean(axis=axes, keepdims=True)
    std = x.std(axis=axes, keepdims=True)
    std = np.where(std > 0, std, 1.0)
    return [Dataset((d.inputs - mean) / std, d.labels, d.num_classes) for d in (train, *others)]


def plan_epoch(n: int, batch_size: int, base_seed: int, epoch: int) -> BatchPlan:
    """Shuffle [0, n) and chunk it into universal batches; short tail kept."""
    if not 1 <= batch_size <= n:
        raise DatasetError(f"batch size must be in [1, {n}], got {batch_size}")
    perm = stream(base_seed, "shuffle", epoch).permutation(n)
    batches = tuple(perm[i : i + batch_size] for i in range(0, n, batch_size))
    return BatchPlan(int(base_seed), int(epoch), int(batch_size), batches)
