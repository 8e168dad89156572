"""Labeled image datasets: a procedural shapes set and the CIFAR-10 binary format."""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import DatasetConfig
from .errors import ConfigError, DataError, FormatError


@dataclass
class LabeledDataset:
    images: np.ndarray          # float32 [N, C, H, W], standardized
    labels: np.ndarray          # int64 [N]
    num_classes: int
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)


# ---------------------------------------------------------------------------
# procedural shapes
# ---------------------------------------------------------------------------

PATTERNS = ("square", "circle", "hstripes", "cross", "vstripes", "ring", "triangle", "plus")
PIXEL_NOISE = 0.1


def _pattern(kind: str, size: int, cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    box = (np.abs(dx) <= r) & (np.abs(dy) <= r)
    dist = np.hypot(dy, dx)
    if kind == "square":
        m = box
    elif kind == "circle":
        m = dist <= r
    elif kind == "hstripes":
        m = box & (np.floor((dy + r) / 2) % 2 == 0)
    elif kind == "vstripes":
        m = box & (np.floor((dx + r) / 2) % 2 == 0)
    elif kind == "cross":
        m = box & ((np.abs(dx - dy) <= 1) | (np.abs(dx + dy) <= 1))
    elif kind == "ring":
        m = (dist <= r) & (dist >= r - 1.5)
    elif kind == "triangle":
        m = (dy >= -r) & (dy <= r) & (np.abs(dx) <= (dy + r) / 2)
    elif kind == "plus":
        m = box & ((np.abs(dx) <= 1) | (np.abs(dy) <= 1))
    else:
        raise ConfigError(f"unknown pattern {kind!r}")
    return m.astype(np.float64)


def _render(rng: np.random.Generator, count: int, classes: int, size: int):
    labels = np.arange(count) % classes
    labels = labels[rng.permutation(count)]
    images = np.empty((count, 3, size, size), dtype=np.float64)
    for i, k in enumerate(labels):
        cy, cx = rng.uniform(0.35 * size, 0.65 * size, 2)
        r = rng.uniform(0.25, 0.4) * size
        mask = _pattern(PATTERNS[k], size, cy, cx, r)
        fg = rng.uniform(0.6, 1.0, 3)[:, None, None]
        bg = rng.uniform(0.0, 0.3, 3)[:, None, None]
        images[i] = bg + (fg - bg) * mask + rng.normal(0.0, PIXEL_NOISE, (3, size, size))
    return images, labels.astype(np.int64)


@functools.lru_cache(maxsize=None)
def shapes_channel_stats(classes: int, size: int) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Per-channel mean/std of the raw generator output, from a fixed reference draw."""
    rng = np.random.default_rng([20240601, classes, size])
    images, _ = _render(rng, 256 * classes, classes, size)
    return tuple(images.mean(axis=(0, 2, 3)).tolist()), tuple(images.std(axis=(0, 2, 3)).tolist())


def shapes_split(cfg: DatasetConfig, split: str) -> LabeledDataset:
    """One split of the shapes dataset; train and test draw from disjoint seed streams."""
    if cfg.classes < 2:
        raise ConfigError("shapes dataset needs at least 2 classes")
    if cfg.classes > len(PATTERNS):
        raise ConfigError(f"shapes dataset supports at most {len(PATTERNS)} classes, got {cfg.classes}")
    stream, count = (0, cfg.train_count) if split == "train" else (1, cfg.test_count)
    mean, std = shapes_channel_stats(cfg.classes, cfg.image_size)
    rng = np.random.default_rng([cfg.seed, stream])
    raw, labels = _render(rng, count, cfg.classes, cfg.image_size)
    images = ((raw - np.array(mean)[:, None, None]) / np.array(std)[:, None, None]).astype(np.float32)
    meta = {"kind": "shapes", "channel_mean": list(mean), "channel_std": list(std)}
    return LabeledDataset(images, labels, cfg.classes, meta)


def generate_shapes(cfg: DatasetConfig) -> tuple[LabeledDataset, LabeledDataset]:
    """Deterministic (train, test) pair."""
    return shapes_split(cfg, "train"), shapes_split(cfg, "test")


# ---------------------------------------------------------------------------
# CIFAR-10 binary
# ---------------------------------------------------------------------------

CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_RECORDS_PER_BATCH = 10000
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"
CIFAR_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR_STD = (0.2470, 0.2435, 0.2616)


def parse_cifar10_batch(buf: bytes, name: str = "<buffer>", records: int = CIFAR_RECORDS_PER_BATCH):
    """Split one binary batch into uint8 images [N,3,32,32] and int64 labels."""
    expected = records * CIFAR_RECORD
    if len(buf) != expected:
        offset = min(len(buf), expected) // CIFAR_RECORD * CIFAR_RECORD
        raise FormatError(f"{name}: expected {expected} bytes ({records} records of {CIFAR_RECORD}), "
                          f"got {len(buf)}; first malformed record at byte offset {offset}")
    arr = np.frombuffer(buf, dtype=np.uint8).reshape(records, CIFAR_RECORD)
    labels = arr[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise FormatError(f"{name}: label byte {labels[bad[0]]} > 9 at byte offset {bad[0] * CIFAR_RECORD}")
    return arr[:, 1:].reshape(records, 3, 32, 32).copy(), labels


def _cifar_dir(path) -> Path:
    p = Path(path)
    if not (p / CIFAR_TEST_FILE).exists() and (p / "cifar-10-batches-bin" / CIFAR_TEST_FILE).exists():
        p = p / "cifar-10-batches-bin"
    return p


def standardize_cifar(images: np.ndarray) -> np.ndarray:
    x = images.astype(np.float32) / 255.0
    mean = np.array(CIFAR_MEAN, dtype=np.float32)[:, None, None]
    std = np.array(CIFAR_STD, dtype=np.float32)[:, None, None]
    return ((x - mean) / std).astype(np.float32)


def _load_cifar_split(root: Path, files) -> LabeledDataset:
    images, labels = [], []
    for fname in files:
        path = root / fname
        if not path.exists():
            raise DataError(f"missing CIFAR-10 batch file {path}")
        im, lb = parse_cifar10_batch(path.read_bytes(), str(path))
        images.append(im)
        labels.append(lb)
    meta = {"kind": "cifar10", "channel_mean": list(CIFAR_MEAN), "channel_std": list(CIFAR_STD)}
    return LabeledDataset(standardize_cifar(np.concatenate(images)), np.concatenate(labels), 10, meta)


def load_cifar10_binary(path, split: str | None = None):
    """Load (train, test) from the standard binary batches, or only one split."""
    root = _cifar_dir(path)
    if split == "train":
        return _load_cifar_split(root, CIFAR_TRAIN_FILES)
    if split == "test":
        return _load_cifar_split(root, (CIFAR_TEST_FILE,))
    train = _load_cifar_split(root, CIFAR_TRAIN_FILES)
    test = _load_cifar_split(root, (CIFAR_TEST_FILE,))
    if len(train) != 50000 or len(test) != 10000:
        raise FormatError(f"expected 50000/10000 train/test images, got {len(train)}/{len(test)}")
    return train, test


def load_dataset(cfg: DatasetConfig, split: str) -> LabeledDataset:
    """One split ('train' or 'test') of the configured dataset."""
    if split not in ("train", "test"):
        raise ConfigError(f"split must be 'train' or 'test', got {split!r}")
    if cfg.kind == "shapes":
        return shapes_split(cfg, split)
    if cfg.kind == "cifar10":
        return load_cifar10_binary(cfg.path, split)
    raise ConfigError(f"unknown dataset kind {cfg.kind!r}")
