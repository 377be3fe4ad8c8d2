"""Synthetic ten-class texture dataset.

Each class draws from its own parametric texture family: an oriented sinusoid plus a field
of Gaussian blobs, tinted with a class hue. Hues sit 36° apart, so the classes are separable
by colour alone; frequency, orientation and blob density add further cues. Every image gets
its own phase, blob layout, hue jitter and pixel noise, drawn from a generator keyed by
``(seed, class, index)``.
"""
from __future__ import annotations

import colorsys
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from ..errors import ConfigError, DataError
from ..rng import STREAM_SYNTHETIC, make_rng
from .images import quantize, write_ppm
from .labels import NUM_CLASSES, dir_name
from .manifest import DatasetManifest, ManifestEntry, write_manifest

log = logging.getLogger("capsulefusion.data")


@dataclass(frozen=True)
class TextureParams:
    frequency: float
    orientation: float  # radians
    blob_count: int
    hue: float  # [0, 1)


def class_textures() -> tuple[TextureParams, ...]:
    return tuple(
        TextureParams(
            frequency=2.0 + 1.5 * (k % 5),
            orientation=math.radians(18.0 * k),
            blob_count=2 + 2 * (k % 4),
            hue=(36.0 * k) / 360.0,
        )
        for k in range(NUM_CLASSES)
    )


@dataclass(frozen=True)
class SyntheticSpec:
    per_class: int | tuple[int, ...] = 16
    size: int = 64
    seed: int = 1234
    textures: tuple[TextureParams, ...] = field(default_factory=class_textures)
    noise: float = 0.02

    def __post_init__(self):
        if not isinstance(self.per_class, int):
            object.__setattr__(self, "per_class", tuple(int(c) for c in self.per_class))

    @property
    def counts(self) -> list[int]:
        if isinstance(self.per_class, int):
            return [self.per_class] * NUM_CLASSES
        return list(self.per_class)

    def validate(self) -> None:
        counts = self.counts
        if len(counts) != NUM_CLASSES:
            raise ConfigError(f"per_class needs {NUM_CLASSES} entries, got {len(counts)}")
        if min(counts) < 1:
            raise ConfigError("per_class must be >= 1 for every class", per_class=counts)
        if self.size < 4:
            raise ConfigError(f"size must be >= 4, got {self.size}", size=self.size)
        if len(self.textures) != NUM_CLASSES or len(set(self.textures)) != NUM_CLASSES:
            raise ConfigError("need ten distinct texture parameter sets")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SyntheticSpec":
        known = {"per_class", "size", "seed", "noise"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown synthetic keys: {sorted(unknown)}", keys=sorted(unknown))
        return cls(**data)


def render_texture(params: TextureParams, size: int, rng: np.random.Generator, noise: float = 0.02) -> np.ndarray:
    """One [3, size, size] float64 image in [0, 1]."""
    yy, xx = np.meshgrid(np.arange(size) / size, np.arange(size) / size, indexing="ij")
    theta = params.orientation + rng.uniform(-0.1, 0.1)
    phase = rng.uniform(0.0, 2 * math.pi)
    wave = 0.5 + 0.5 * np.sin(2 * math.pi * params.frequency * (xx * math.cos(theta) + yy * math.sin(theta)) + phase)

    blobs = np.zeros((size, size))
    centres = rng.uniform(0.0, 1.0, size=(params.blob_count, 2))
    radii = rng.uniform(0.05, 0.12, size=params.blob_count)
    for (cy, cx), r in zip(centres, radii):
        blobs += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
    intensity = np.clip(0.6 * wave + 0.4 * np.clip(blobs, 0.0, 1.0), 0.0, 1.0)

    hue = (params.hue + rng.uniform(-0.015, 0.015)) % 1.0
    tint = np.array(colorsys.hsv_to_rgb(hue, 1.0, 1.0))
    saturation = 0.65
    value = 0.3 + 0.7 * intensity
    image = value[None] * ((1 - saturation) + saturation * tint[:, None, None])
    if noise > 0:
        image = image + rng.normal(0.0, noise, size=image.shape)
    return np.clip(image, 0.0, 1.0)


def generate_synthetic(spec: SyntheticSpec, out_dir: str | Path) -> DatasetManifest:
    """Write ``images/<class>/<idx>.ppm`` and ``labels.csv`` under ``out_dir``."""
    spec.validate()
    out_dir = Path(out_dir)
    entries = []
    try:
        for label, count in enumerate(spec.counts):
            class_dir = out_dir / "images" / dir_name(label)
            class_dir.mkdir(parents=True, exist_ok=True)
            for idx in range(count):
                rng = make_rng(spec.seed, STREAM_SYNTHETIC, label, idx)
                image = render_texture(spec.textures[label], spec.size, rng, spec.noise)
                rel = f"images/{dir_name(label)}/{idx:04d}.ppm"
                write_ppm(out_dir / rel, quantize(image))
                entries.append(ManifestEntry(rel, label))
        manifest = DatasetManifest(out_dir, tuple(entries))
        write_manifest(manifest, out_dir / "labels.csv")
    except OSError as exc:
        raise DataError(f"cannot write synthetic dataset to {out_dir}: {exc}", path=str(out_dir)) from exc
    log.info("Wrote %d synthetic images (%d classes) to %s", len(manifest), NUM_CLASSES, out_dir)
    return manifest
