"""Epoch batch streams with background image preparation."""
from __future__ import annotations

import logging
import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from ..errors import ConfigError, DataError
from ..rng import STREAM_SHUFFLE, make_rng
from .images import load_image
from .manifest import DatasetManifest

log = logging.getLogger("capsulefusion.data")


@dataclass(frozen=True)
class ChannelStats:
    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    def apply(self, images: np.ndarray) -> np.ndarray:
        mean = np.asarray(self.mean, dtype=images.dtype).reshape(1, -1, 1, 1)
        std = np.asarray(self.std, dtype=images.dtype).reshape(1, -1, 1, 1)
        return (images - mean) / std

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std)}


@dataclass
class Batch:
    images: np.ndarray  # [N, 3, H, W]
    labels: np.ndarray  # [N]
    indices: np.ndarray  # positions in the manifest

    def __len__(self) -> int:
        return len(self.labels)


class ImageLoader:
    """Decodes and resizes images, keeping decoded arrays in memory between epochs."""

    def __init__(self, size: int | None = None, cache: bool = True, dtype=np.float32):
        self.size = size
        self.dtype = dtype
        self._cache: dict[Path, np.ndarray] | None = {} if cache else None
        self._lock = threading.Lock()

    def __call__(self, path: Path) -> np.ndarray:
        if self._cache is not None:
            with self._lock:
                hit = self._cache.get(path)
            if hit is not None:
                return hit
        image = load_image(path, self.size, self.dtype).data
        if self._cache is not None:
            with self._lock:
                self._cache[path] = image
        return image


def epoch_order(n: int, shuffle_seed: int | None, epoch: int = 0) -> np.ndarray:
    if shuffle_seed is None:
        return np.arange(n)
    return make_rng(shuffle_seed, STREAM_SHUFFLE, epoch).permutation(n)


def make_batches(
    manifest: DatasetManifest,
    batch_size: int,
    shuffle_seed: int | None = None,
    normalization: ChannelStats | None = None,
    *,
    epoch: int = 0,
    image_size: int | None = None,
    loader: ImageLoader | None = None,
    workers: int = 0,
) -> Iterator[Batch]:
    """Yield batches covering every entry once; the last batch may be short.

    With ``workers > 0`` up to ``workers`` batches are prepared ahead on a thread pool;
    batches still come out in the shuffled order.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}", batch_size=batch_size)
    if len(manifest) == 0:
        raise DataError("cannot batch an empty manifest")
    loader = loader or ImageLoader(image_size)
    paths = manifest.paths()
    labels = manifest.labels
    order = epoch_order(len(manifest), shuffle_seed, epoch)
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]

    def assemble(chunk: np.ndarray) -> Batch:
        images = np.stack([loader(paths[i]) for i in chunk])
        if normalization is not None:
            images = normalization.apply(images)
        return Batch(images, labels[chunk], chunk)

    if workers <= 0:
        for chunk in chunks:
            yield assemble(chunk)
        return

    with ThreadPoolExecutor(max_workers=workers) as pool:
        pending = deque()
        for chunk in chunks:
            pending.append(pool.submit(assemble, chunk))
            if len(pending) > workers:
                yield pending.popleft().result()
        while pending:
            yield pending.popleft().result()


def load_all(manifest: DatasetManifest, image_size: int | None = None,
             loader: ImageLoader | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Whole manifest as ([N,3,H,W] images, [N] labels) in manifest order."""
    if len(manifest) == 0:
        raise DataError("cannot load an empty manifest")
    loader = loader or ImageLoader(image_size)
    return np.stack([loader(p) for p in manifest.paths()]), manifest.labels


def compute_channel_stats(manifest: DatasetManifest, image_size: int | None = None,
                          loader: ImageLoader | None = None) -> ChannelStats:
    """Per-channel mean and population std over every pixel of ``manifest``."""
    images, _ = load_all(manifest, image_size, loader)
    data = images.astype(np.float64)
    mean = data.mean(axis=(0, 2, 3))
    std = np.maximum(data.std(axis=(0, 2, 3)), 1e-6)
    log.info("Channel stats over %d images: mean=%s std=%s", len(manifest),
             np.round(mean, 4).tolist(), np.round(std, 4).tolist())
    return ChannelStats(tuple(float(m) for m in mean), tuple(float(s) for s in std))
