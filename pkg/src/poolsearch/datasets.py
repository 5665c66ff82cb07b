"""Dataset I/O: CIFAR-10 binary files and a seeded synthetic generator.

The synthetic set exists so the trainable backend has something whose
classes differ in *scale* -- half the classes are stripe textures at
increasing frequency, half are blobs at increasing size -- which is exactly
the kind of structure whose best analysis resolution a pooling-placement
search is supposed to find.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import substream

CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes

STRIPE_FREQS = (1.0, 2.0, 3.0, 5.0, 7.0)       # cycles across the image
BLOB_SCALES = (0.06, 0.10, 0.16, 0.24, 0.36)   # gaussian sigma / image size


class CifarFormatError(ValueError):
    """Malformed CIFAR binary payload; message carries the byte offset."""


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray   # (n, channels, height, width), float in [0, 1]
    labels: np.ndarray   # (n,), int64

    def __len__(self) -> int:
        return self.images.shape[0]


def load_cifar_binary(path: str | Path) -> Dataset:
    """Parse the CIFAR-10 binary layout: 3073-byte records, label then R/G/B planes."""
    raw = Path(path).read_bytes()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES != 0:
        raise CifarFormatError(
            f"file length {len(raw)} is not a positive multiple of {CIFAR_RECORD_BYTES}"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        offset = int(bad[0]) * CIFAR_RECORD_BYTES
        raise CifarFormatError(
            f"label byte {int(labels[bad[0]])} > 9 at byte offset {offset}"
        )
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return Dataset(images=images, labels=labels)


def synth_dataset(seed: int, n_per_class: int, size: int) -> Dataset:
    """Balanced 10-class texture/shape images, bit-reproducible from the seed.

    Classes 0-4: oriented sinusoidal stripes at STRIPE_FREQS cycles.
    Classes 5-9: centered gaussian blobs at BLOB_SCALES relative size.
    Each sample gets a random orientation/phase or center jitter plus pixel
    noise; all three channels carry the same pattern with small tints.
    """
    if size not in (16, 32):
        raise ValueError(f"size must be 16 or 32, got {size}")
    if n_per_class < 1:
        raise ValueError("n_per_class must be positive (empty dataset requested)")
    rng = substream(seed, "data")
    coords = (np.arange(size) + 0.5) / size
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    images = np.zeros((10 * n_per_class, 3, size, size), dtype=np.float64)
    labels = np.zeros(10 * n_per_class, dtype=np.int64)
    idx = 0
    for label in range(10):
        for _ in range(n_per_class):
            if label < 5:
                freq = STRIPE_FREQS[label]
                theta = rng.uniform(0.0, np.pi)
                phase = rng.uniform(0.0, 2.0 * np.pi)
                axis = xx * np.cos(theta) + yy * np.sin(theta)
                base = 0.5 + 0.45 * np.sin(2.0 * np.pi * freq * axis + phase)
            else:
                sigma = BLOB_SCALES[label - 5]
                cx = 0.5 + rng.uniform(-0.08, 0.08)
                cy = 0.5 + rng.uniform(-0.08, 0.08)
                r2 = (xx - cx) ** 2 + (yy - cy) ** 2
                base = 0.9 * np.exp(-r2 / (2.0 * sigma**2))
            tint = rng.uniform(-0.05, 0.05, size=3)
            noise = rng.normal(0.0, 0.03, size=(3, size, size))
            images[idx] = np.clip(base[None, :, :] + tint[:, None, None] + noise, 0.0, 1.0)
            labels[idx] = label
            idx += 1
    return Dataset(images=images, labels=labels)


def split_half(dataset: Dataset, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint 50/50 train/validation split by seeded shuffle."""
    n = len(dataset)
    order = substream(seed, "split").permutation(n)
    half = n // 2
    train_idx, val_idx = order[:half], order[half:]
    return (
        Dataset(images=dataset.images[train_idx], labels=dataset.labels[train_idx]),
        Dataset(images=dataset.images[val_idx], labels=dataset.labels[val_idx]),
    )
