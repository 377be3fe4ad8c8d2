"""U-Net encoder-decoder used for reconstruction pretraining and as a feature extractor.

Level ``l`` of the encoder runs two conv→norm→activation layers at width
``base_channels · 2**l`` followed by 2× pooling. The bottleneck doubles the width once more
and optionally mixes positions with multi-head self-attention. Each decoder level upsamples,
concatenates the matching encoder map (skip first, upsampled map second) and runs another
two-layer block. A 1×1 convolution and a sigmoid produce the reconstruction.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping

import numpy as np

from ..errors import ConfigError, ShapeError
from ..nn import ACTIVATIONS, NORMS, Conv2d, Module, SpatialSelfAttention, activate, make_norm
from ..rng import STREAM_INIT, make_rng
from ..tensor import Tensor, concat, global_avg_pool, pool2d, sigmoid, upsample2d

POOLS = ("max", "avg")


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 3
    base_channels: int = 16
    depth: int = 3
    attention_bottleneck: bool = True
    norm: str = "batch"
    out_channels: int = 3
    attention_heads: int = 4
    pool: str = "max"
    activation: str = "relu"

    def width(self, level: int) -> int:
        return self.base_channels * 2 ** level

    @property
    def feature_dim(self) -> int:
        return self.width(self.depth)

    def validate(self) -> None:
        problems = []
        if self.depth < 1:
            problems.append(f"depth must be >= 1, got {self.depth}")
        if self.in_channels < 1 or self.out_channels < 1 or self.base_channels < 1:
            problems.append("channel counts must be positive")
        if self.norm not in NORMS:
            problems.append(f"norm must be one of {NORMS}, got {self.norm!r}")
        if self.pool not in POOLS:
            problems.append(f"pool must be one of {POOLS}, got {self.pool!r}")
        if self.activation not in ACTIVATIONS:
            problems.append(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.attention_bottleneck and (self.attention_heads < 1 or self.feature_dim % self.attention_heads):
            problems.append(
                f"bottleneck width {self.feature_dim} not divisible by {self.attention_heads} heads"
            )
        if problems:
            raise ConfigError("invalid UNetConfig: " + "; ".join(problems), problems=problems)

    def check_input(self, height: int, width: int) -> None:
        step = 2 ** self.depth
        if height % step or width % step:
            raise ShapeError(
                f"input {height}x{width} not divisible by 2**depth = {step}",
                height=height, width=width, depth=self.depth,
            )

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "UNetConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown unet keys: {sorted(unknown)}", keys=sorted(unknown))
        return cls(**data)


@dataclass
class EncoderFeatures:
    bottleneck_vector: Tensor
    per_level_maps: list[Tensor] = field(default_factory=list)
    bottleneck_map: Tensor | None = None


class ConvBlock(Module):
    """Two conv(3×3, no bias) → norm → activation layers."""

    def __init__(self, in_channels, out_channels, norm, activation, rng, dtype=np.float32):
        super().__init__()
        self.activation = activation
        self.conv1 = self.add_child("conv1", Conv2d(in_channels, out_channels, 3, rng, bias=False, dtype=dtype))
        self.norm1 = self.add_child("norm1", make_norm(norm, out_channels, dtype))
        self.conv2 = self.add_child("conv2", Conv2d(out_channels, out_channels, 3, rng, bias=False, dtype=dtype))
        self.norm2 = self.add_child("norm2", make_norm(norm, out_channels, dtype))

    def forward(self, x: Tensor) -> Tensor:
        x = activate(self.norm1(self.conv1(x)), self.activation)
        return activate(self.norm2(self.conv2(x)), self.activation)


class UNetModel(Module):
    def __init__(self, config: UNetConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.config = config
        c = config
        self.encoders: list[ConvBlock] = []
        prev = c.in_channels
        for level in range(c.depth):
            block = ConvBlock(prev, c.width(level), c.norm, c.activation, rng, dtype)
            self.encoders.append(self.add_child(f"enc{level}", block))
            prev = c.width(level)
        self.bottleneck = self.add_child(
            "bottleneck", ConvBlock(prev, c.feature_dim, c.norm, c.activation, rng, dtype)
        )
        self.attention = None
        if c.attention_bottleneck:
            self.attention = self.add_child(
                "attention", SpatialSelfAttention(c.feature_dim, c.attention_heads, rng, dtype)
            )
        self.decoders: dict[int, ConvBlock] = {}
        for level in reversed(range(c.depth)):
            merged = c.width(level) + c.width(level + 1)
            block = ConvBlock(merged, c.width(level), c.norm, c.activation, rng, dtype)
            self.decoders[level] = self.add_child(f"dec{level}", block)
        self.head = self.add_child("head", Conv2d(c.width(0), c.out_channels, 1, rng, bias=True, dtype=dtype))

    def _check(self, batch: Tensor) -> None:
        if batch.ndim != 4 or batch.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"expected [N,{self.config.in_channels},H,W], got {batch.shape}", shape=batch.shape
            )
        self.config.check_input(batch.shape[2], batch.shape[3])

    def encoder_path(self, batch: Tensor) -> tuple[Tensor, list[Tensor]]:
        """Run encoder levels and bottleneck; returns (bottleneck map, skip maps)."""
        self._check(batch)
        skips = []
        x = batch
        for block in self.encoders:
            x = block(x)
            skips.append(x)
            x = pool2d(x, self.config.pool, 2, 2)
        x = self.bottleneck(x)
        if self.attention is not None:
            x = self.attention(x)
        return x, skips

    def decoder_path(self, x: Tensor, skips: list[Tensor], zero_skips: bool = False) -> Tensor:
        for level in reversed(range(self.config.depth)):
            skip = skips[level]
            if zero_skips:
                skip = Tensor(np.zeros_like(skip.data))
            x = self.decoders[level](concat([skip, upsample2d(x, 2)], axis=1))
        return sigmoid(self.head(x))

    def forward(self, batch: Tensor, zero_skips: bool = False) -> Tensor:
        x, skips = self.encoder_path(batch)
        return self.decoder_path(x, skips, zero_skips)

    def reconstruct_and_encode(self, batch: Tensor) -> tuple[Tensor, EncoderFeatures]:
        """One encoder pass shared by the reconstruction and the pooled bottleneck features."""
        x, skips = self.encoder_path(batch)
        features = EncoderFeatures(bottleneck_vector=global_avg_pool(x), bottleneck_map=x)
        return self.decoder_path(x, skips), features

    def encode(self, batch: Tensor, keep_maps: bool = False) -> EncoderFeatures:
        x, skips = self.encoder_path(batch)
        return EncoderFeatures(
            bottleneck_vector=global_avg_pool(x),
            per_level_maps=skips if keep_maps else [],
            bottleneck_map=x,
        )


def build_unet(config: UNetConfig, seed: int, dtype=np.float32) -> UNetModel:
    """Deterministically initialise a U-Net from ``seed`` (He-uniform convs, zero biases)."""
    config.validate()
    return UNetModel(config, make_rng(seed, STREAM_INIT), dtype)


def unet_forward(model: UNetModel, batch: Tensor, zero_skips: bool = False) -> Tensor:
    return model(batch, zero_skips=zero_skips)


def encode(model: UNetModel, batch: Tensor, keep_maps: bool = False) -> EncoderFeatures:
    return model.encode(batch, keep_maps=keep_maps)


def psnr(prediction: Tensor | np.ndarray, target: Tensor | np.ndarray, cap: float = 100.0) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1], capped at ``cap``."""
    p = prediction.data if isinstance(prediction, Tensor) else np.asarray(prediction)
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if p.shape != t.shape:
        raise ShapeError(f"psnr: shape mismatch {p.shape} vs {t.shape}", left=p.shape, right=t.shape)
    mse = float(np.mean((p.astype(np.float64) - t.astype(np.float64)) ** 2))
    return psnr_from_mse(mse, cap)


def psnr_from_mse(mse: float, cap: float = 100.0) -> float:
    if mse < 1e-10:
        return cap
    return min(cap, 10.0 * math.log10(1.0 / mse))
