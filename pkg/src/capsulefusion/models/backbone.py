"""Compound-scalable EfficientNet-style feature extractor built from MBConv blocks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from ..errors import ConfigError, ShapeError
from ..nn import ACTIVATIONS, NORMS, Conv2d, Dense, Module, activate, make_norm
from ..rng import STREAM_INIT, make_rng
from ..tensor import Tensor, broadcast_to, global_avg_pool, reshape, sigmoid
from ..utils import round_half_up


@dataclass(frozen=True)
class StageSpec:
    expansion: int
    channels: int
    repeats: int
    stride: int
    kernel: int

    @classmethod
    def parse(cls, value: "StageSpec | Sequence[int] | Mapping[str, int]") -> "StageSpec":
        if isinstance(value, StageSpec):
            return value
        if isinstance(value, Mapping):
            return cls(**value)
        return cls(*value)


def nano_stages() -> tuple[StageSpec, ...]:
    return (
        StageSpec(1, 16, 1, 1, 3),
        StageSpec(6, 24, 2, 2, 3),
        StageSpec(6, 40, 2, 2, 5),
        StageSpec(6, 64, 1, 2, 3),
    )


@dataclass(frozen=True)
class BackboneConfig:
    stem_channels: int = 16
    stages: tuple[StageSpec, ...] = field(default_factory=nano_stages)
    width_mult: float = 1.0
    depth_mult: float = 1.0
    se_ratio: float = 0.25
    feature_dim: int = 128
    in_channels: int = 3
    activation: str = "silu"
    norm: str = "batch"

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(StageSpec.parse(s) for s in self.stages))

    def scaled_channels(self, channels: int) -> int:
        return max(8, round_half_up(channels * self.width_mult))

    def scaled_repeats(self, repeats: int) -> int:
        return max(1, math.ceil(repeats * self.depth_mult))

    @property
    def cumulative_stride(self) -> int:
        return 2 * math.prod(s.stride for s in self.stages)

    def validate(self) -> None:
        problems = []
        if self.width_mult < 0.1 or self.depth_mult < 0.1:
            problems.append("width_mult and depth_mult must be >= 0.1")
        if not 0 < self.se_ratio <= 1:
            problems.append(f"se_ratio {self.se_ratio} outside (0, 1]")
        if not self.stages:
            problems.append("at least one stage is required")
        for i, s in enumerate(self.stages):
            if s.stride not in (1, 2):
                problems.append(f"stage {i}: stride must be 1 or 2")
            if s.kernel not in (3, 5):
                problems.append(f"stage {i}: kernel must be 3 or 5")
            if s.expansion < 1 or s.repeats < 1 or s.channels < 1:
                problems.append(f"stage {i}: expansion, repeats and channels must be positive")
        if self.feature_dim < 1 or self.stem_channels < 1:
            problems.append("feature_dim and stem_channels must be positive")
        if self.activation not in ACTIVATIONS:
            problems.append(f"activation must be one of {ACTIVATIONS}")
        if self.norm not in NORMS:
            problems.append(f"norm must be one of {NORMS}")
        if problems:
            raise ConfigError("invalid BackboneConfig: " + "; ".join(problems), problems=problems)

    def to_dict(self) -> dict[str, Any]:
        return {
            "stem_channels": self.stem_channels,
            "stages": [[s.expansion, s.channels, s.repeats, s.stride, s.kernel] for s in self.stages],
            "width_mult": self.width_mult,
            "depth_mult": self.depth_mult,
            "se_ratio": self.se_ratio,
            "feature_dim": self.feature_dim,
            "in_channels": self.in_channels,
            "activation": self.activation,
            "norm": self.norm,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "BackboneConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown backbone keys: {sorted(unknown)}", keys=sorted(unknown))
        return cls(**data)


class SqueezeExcite(Module):
    """Per-channel gate: global pool → dense(C→⌈C·ratio⌉) → activation → dense(→C) → sigmoid."""

    def __init__(self, channels: int, se_ratio: float, rng, zero_init=False, activation="silu", dtype=np.float32):
        super().__init__()
        self.activation = activation
        squeezed = math.ceil(channels * se_ratio)
        if channels * se_ratio < 1:
            raise ConfigError(f"{channels} channels × se_ratio {se_ratio} < 1", channels=channels)
        self.reduce = self.add_child("reduce", Dense(channels, squeezed, rng, zero_init=zero_init, dtype=dtype))
        self.expand = self.add_child("expand", Dense(squeezed, channels, rng, zero_init=zero_init, dtype=dtype))

    def gate(self, x: Tensor) -> Tensor:
        return sigmoid(self.expand(activate(self.reduce(global_avg_pool(x)), self.activation)))

    def forward(self, x: Tensor) -> Tensor:
        n, c, _, _ = x.shape
        return x * broadcast_to(reshape(self.gate(x), (n, c, 1, 1)), x.shape)


def se_gate(features: Tensor, se: SqueezeExcite | float, seed: int = 0) -> Tensor:
    """Rescale each channel of ``features`` by its squeeze-and-excitation gate.

    ``se`` is either a trained block or an ``se_ratio``; a ratio builds a fresh seeded block
    sized to the feature channels.
    """
    if features.ndim != 4:
        raise ShapeError(f"se_gate expects [N,C,H,W], got {features.shape}")
    if not isinstance(se, SqueezeExcite):
        se = SqueezeExcite(features.shape[1], float(se), make_rng(seed, STREAM_INIT), dtype=features.dtype)
    return se(features)


class MBConv(Module):
    """1×1 expansion → depthwise k×k → SE → 1×1 projection, residual on stride 1 with equal widths."""

    def __init__(self, in_ch, out_ch, expansion, stride, kernel, se_ratio, activation, norm, rng,
                 dtype=np.float32):
        super().__init__()
        hidden = in_ch * expansion
        self.activation = activation
        self.use_residual = stride == 1 and in_ch == out_ch
        self.expand = None
        if expansion != 1:
            self.expand = self.add_child("expand", Conv2d(in_ch, hidden, 1, rng, bias=False, dtype=dtype))
            self.expand_norm = self.add_child("expand_norm", make_norm(norm, hidden, dtype))
        self.depthwise = self.add_child(
            "depthwise", Conv2d(hidden, hidden, kernel, rng, stride=stride, groups=hidden, bias=False, dtype=dtype)
        )
        self.depthwise_norm = self.add_child("depthwise_norm", make_norm(norm, hidden, dtype))
        self.se = self.add_child("se", SqueezeExcite(hidden, se_ratio, rng, activation=activation, dtype=dtype))
        self.project = self.add_child("project", Conv2d(hidden, out_ch, 1, rng, bias=False, dtype=dtype))
        self.project_norm = self.add_child("project_norm", make_norm(norm, out_ch, dtype))

    def forward(self, x: Tensor) -> Tensor:
        h = x
        if self.expand is not None:
            h = activate(self.expand_norm(self.expand(h)), self.activation)
        h = activate(self.depthwise_norm(self.depthwise(h)), self.activation)
        h = self.project_norm(self.project(se_gate(h, self.se)))
        return x + h if self.use_residual else h


class BackboneModel(Module):
    def __init__(self, config: BackboneConfig, rng, dtype=np.float32):
        super().__init__()
        self.config = config
        c = config
        stem = c.scaled_channels(c.stem_channels)
        self.stem = self.add_child("stem", Conv2d(c.in_channels, stem, 3, rng, stride=2, bias=False, dtype=dtype))
        self.stem_norm = self.add_child("stem_norm", make_norm(c.norm, stem, dtype))
        self.blocks: list[MBConv] = []
        prev = stem
        for si, stage in enumerate(c.stages):
            out = c.scaled_channels(stage.channels)
            for bi in range(c.scaled_repeats(stage.repeats)):
                stride = stage.stride if bi == 0 else 1
                block = MBConv(prev, out, stage.expansion, stride, stage.kernel, c.se_ratio,
                               c.activation, c.norm, rng, dtype)
                self.blocks.append(self.add_child(f"stage{si}.block{bi}", block))
                prev = out
        self.head = self.add_child("head", Conv2d(prev, c.feature_dim, 1, rng, bias=False, dtype=dtype))
        self.head_norm = self.add_child("head_norm", make_norm(c.norm, c.feature_dim, dtype))

    def forward(self, batch: Tensor) -> Tensor:
        c = self.config
        if batch.ndim != 4 or batch.shape[1] != c.in_channels:
            raise ShapeError(f"expected [N,{c.in_channels},H,W], got {batch.shape}", shape=batch.shape)
        step = c.cumulative_stride
        if batch.shape[2] % step or batch.shape[3] % step:
            raise ShapeError(
                f"input {batch.shape[2]}x{batch.shape[3]} not divisible by cumulative stride {step}",
                shape=batch.shape, stride=step,
            )
        x = activate(self.stem_norm(self.stem(batch)), c.activation)
        for block in self.blocks:
            x = block(x)
        x = activate(self.head_norm(self.head(x)), c.activation)
        return global_avg_pool(x)


def build_backbone(config: BackboneConfig, seed: int, dtype=np.float32) -> BackboneModel:
    config.validate()
    return BackboneModel(config, make_rng(seed, STREAM_INIT, 2), dtype)


def backbone_forward(model: BackboneModel, batch: Tensor) -> Tensor:
    return model(batch)
