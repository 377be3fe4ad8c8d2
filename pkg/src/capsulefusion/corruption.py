"""Pretext-task corruptions: random patch masking and additive Gaussian noise."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError, DomainError, ShapeError
from .tensor import Tensor, mean_squared_error
from .utils import round_half_up

log = logging.getLogger("capsulefusion.corruption")


class CorruptionKind(str, Enum):
    PATCH_MASK = "patch_mask"
    GAUSSIAN_NOISE = "gaussian_noise"
    COMBINED = "combined"  # mask, then noise over the whole image


class LossPolicy(str, Enum):
    MASKED_ONLY = "masked_only"
    FULL = "full"


@dataclass(frozen=True)
class CorruptionSpec:
    kind: CorruptionKind = CorruptionKind.GAUSSIAN_NOISE
    patch_size: int = 8
    mask_ratio: float = 0.5
    fill_value: float = 0.0
    sigma: float = 0.1
    clamp: bool = True
    loss_policy: LossPolicy | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", CorruptionKind(self.kind))
        if self.loss_policy is not None:
            object.__setattr__(self, "loss_policy", LossPolicy(self.loss_policy))
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ConfigError(f"mask_ratio {self.mask_ratio} outside [0, 1]", mask_ratio=self.mask_ratio)
        if self.patch_size < 1:
            raise ConfigError(f"patch_size must be positive, got {self.patch_size}")
        if self.sigma < 0:
            raise DomainError(f"sigma must be non-negative, got {self.sigma}", sigma=self.sigma)

    @property
    def policy(self) -> LossPolicy:
        if self.loss_policy is not None:
            return self.loss_policy
        return LossPolicy.MASKED_ONLY if self.kind is CorruptionKind.PATCH_MASK else LossPolicy.FULL

    def check_image(self, height: int, width: int) -> None:
        if self.kind is CorruptionKind.GAUSSIAN_NOISE:
            return
        if height % self.patch_size or width % self.patch_size:
            raise ShapeError(
                f"patch_size {self.patch_size} does not divide image {height}x{width}",
                patch_size=self.patch_size, height=height, width=width,
            )

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["loss_policy"] = self.loss_policy.value if self.loss_policy else None
        return d

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CorruptionSpec":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown corruption keys: {sorted(unknown)}", keys=sorted(unknown))
        return cls(**data)


@dataclass
class MaskMap:
    """Per-pixel corruption map, True where the pixel was masked or noised."""

    pixels: np.ndarray

    @property
    def count(self) -> int:
        return int(self.pixels.sum())

    @classmethod
    def full(cls, height: int, width: int) -> "MaskMap":
        return cls(np.ones((height, width), dtype=bool))


def masked_tile_count(spec: CorruptionSpec, height: int, width: int) -> int:
    tiles = (height // spec.patch_size) * (width // spec.patch_size)
    return round_half_up(spec.mask_ratio * tiles)


def _image_array(image: Tensor | np.ndarray) -> np.ndarray:
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    if data.ndim != 3:
        raise ShapeError(f"expected an image [C,H,W], got {data.shape}", shape=data.shape)
    return data


def mask_patches(image: Tensor, spec: CorruptionSpec, rng: np.random.Generator) -> tuple[Tensor, MaskMap]:
    """Fill ``round(mask_ratio · tiles)`` random patch tiles with ``fill_value`` on every channel."""
    data = _image_array(image)
    _, h, w = data.shape
    spec.check_image(h, w)
    p = spec.patch_size
    rows, cols = h // p, w // p
    chosen = rng.choice(rows * cols, size=masked_tile_count(spec, h, w), replace=False)
    tiles = np.zeros(rows * cols, dtype=bool)
    tiles[chosen] = True
    pixels = np.kron(tiles.reshape(rows, cols), np.ones((p, p), dtype=bool)).astype(bool)
    out = data.copy()
    out[:, pixels] = np.asarray(spec.fill_value, dtype=data.dtype)
    return Tensor(out), MaskMap(pixels)


def add_gaussian_noise(image: Tensor, spec: CorruptionSpec, rng: np.random.Generator) -> Tensor:
    """Add i.i.d. N(0, sigma²) noise per pixel and channel; clip to [0, 1] when ``clamp``."""
    if spec.sigma < 0:
        raise DomainError(f"sigma must be non-negative, got {spec.sigma}", sigma=spec.sigma)
    data = _image_array(image)
    if data.size and (data.min() < 0 or data.max() > 1):
        raise DomainError("noise corruption expects images in [0, 1]",
                          minimum=float(data.min()), maximum=float(data.max()))
    if spec.sigma == 0:
        return Tensor(data.copy())
    noisy = data + (rng.standard_normal(data.shape) * spec.sigma).astype(data.dtype)
    if spec.clamp:
        noisy = np.clip(noisy, 0.0, 1.0)
    return Tensor(noisy.astype(data.dtype, copy=False))


def corrupt(image: Tensor, spec: CorruptionSpec, rng: np.random.Generator) -> tuple[Tensor, MaskMap]:
    """Apply ``spec`` to one image and return the corrupted image with its mask map."""
    _, h, w = _image_array(image).shape
    if spec.kind is CorruptionKind.PATCH_MASK:
        return mask_patches(image, spec, rng)
    if spec.kind is CorruptionKind.GAUSSIAN_NOISE:
        return add_gaussian_noise(image, spec, rng), MaskMap.full(h, w)
    masked, _ = mask_patches(image, spec, rng)
    return add_gaussian_noise(masked, spec, rng), MaskMap.full(h, w)


def corrupt_batch(batch: np.ndarray, spec: CorruptionSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Corrupt every image of an [N,C,H,W] array; returns (corrupted, masks [N,H,W])."""
    images, masks = [], []
    for img in batch:
        out, mask = corrupt(Tensor(img), spec, rng)
        images.append(out.data)
        masks.append(mask.pixels)
    return np.stack(images), np.stack(masks)


def reconstruction_loss(
    prediction: Tensor,
    target: Tensor,
    mask: MaskMap | np.ndarray | None,
    policy: LossPolicy | str = LossPolicy.FULL,
) -> Tensor:
    """Mean squared error over all pixels (``full``) or only the mask-true ones (``masked_only``).

    ``mask`` is [H,W] for a single image or [N,H,W] for a batch of [N,C,H,W].
    """
    policy = LossPolicy(policy)
    if prediction.shape != target.shape:
        raise ShapeError(
            f"prediction {prediction.shape} and target {target.shape} differ",
            left=prediction.shape, right=target.shape,
        )
    if policy is LossPolicy.FULL:
        return mean_squared_error(prediction, target)
    if mask is None:
        raise ShapeError("masked_only loss needs a mask")
    pixels = mask.pixels if isinstance(mask, MaskMap) else np.asarray(mask, dtype=bool)
    if not pixels.any():
        raise ShapeError("masked_only loss over an empty mask")
    if pixels.ndim == 3 and prediction.ndim == 4:
        pixels = pixels[:, None, :, :]
    return mean_squared_error(prediction, target, weights=pixels)
