"""Model variants and the dense classification head.

Dataflow per variant:

- ``unet``: pooled U-Net bottleneck → head
- ``efficient``: backbone(raw image or U-Net reconstruction) → head
- ``fusion``: [U-Net features ‖ backbone features] → head
- ``fusion-attention``: softmax-gated sum of projected U-Net and backbone features → head

The head is (dense → activation → dropout) per hidden width, then dense → ``num_classes`` logits.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Mapping

import numpy as np

from ..errors import ConfigError, ShapeError
from ..nn import ACTIVATIONS, Dense, Dropout, Module, activate, channel_view, glorot_uniform
from ..rng import STREAM_DROPOUT, STREAM_INIT, make_rng
from ..tensor import (
    Tensor,
    argmax,
    broadcast_to,
    concat,
    matmul,
    reshape,
    slice_axis,
    softmax,
)
from .backbone import BackboneConfig, BackboneModel, build_backbone
from .unet import UNetConfig, UNetModel, build_unet

log = logging.getLogger("capsulefusion.fusion")

NUM_CLASSES = 10
BACKBONE_INPUTS = ("reconstruction", "raw")


class VariantKind(str, Enum):
    UNET_ONLY = "unet"
    EFFICIENT_ONLY = "efficient"
    EFFICIENT_FUSION_UNET = "fusion"
    EFFICIENT_FUSION_UNET_ATTENTION = "fusion-attention"

    @property
    def title(self) -> str:
        return {
            "unet": "U-Net",
            "efficient": "Efficient",
            "fusion": "Efficient Fusion U-Net",
            "fusion-attention": "Efficient Fusion U-Net with Attention",
        }[self.value]

    @property
    def uses_unet_features(self) -> bool:
        return self is not VariantKind.EFFICIENT_ONLY

    @property
    def uses_backbone(self) -> bool:
        return self is not VariantKind.UNET_ONLY

    @classmethod
    def parse(cls, name: "str | VariantKind") -> "VariantKind":
        try:
            return cls(name)
        except ValueError as exc:
            valid = [v.value for v in cls]
            raise ConfigError(f"unknown variant {name!r}; valid: {', '.join(valid)}", valid=valid) from exc


@dataclass(frozen=True)
class FusionConfig:
    variant: VariantKind = VariantKind.EFFICIENT_FUSION_UNET
    common_dim: int = 128
    head_dims: tuple[int, ...] = (256, 64)
    num_classes: int = NUM_CLASSES
    dropout: float = 0.3
    freeze_encoder: bool = True
    freeze_backbone: bool = False
    backbone_input: str = "reconstruction"
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "variant", VariantKind.parse(self.variant))
        object.__setattr__(self, "head_dims", tuple(int(d) for d in self.head_dims))

    def validate(self) -> None:
        problems = []
        if self.num_classes != NUM_CLASSES:
            problems.append(f"num_classes must be {NUM_CLASSES}, got {self.num_classes}")
        if not self.head_dims or any(d < 1 for d in self.head_dims):
            problems.append("head_dims must be a non-empty list of positive widths")
        if not 0 <= self.dropout < 1:
            problems.append(f"dropout {self.dropout} outside [0, 1)")
        if self.backbone_input not in BACKBONE_INPUTS:
            problems.append(f"backbone_input must be one of {BACKBONE_INPUTS}")
        if self.activation not in ACTIVATIONS:
            problems.append(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.common_dim < 1:
            problems.append("common_dim must be positive")
        if problems:
            raise ConfigError("invalid FusionConfig: " + "; ".join(problems), problems=problems)

    @property
    def needs_unet(self) -> bool:
        return self.variant.uses_unet_features or self.backbone_input == "reconstruction"

    def to_dict(self) -> dict[str, Any]:
        return {
            "variant": self.variant.value,
            "common_dim": self.common_dim,
            "head_dims": list(self.head_dims),
            "num_classes": self.num_classes,
            "dropout": self.dropout,
            "freeze_encoder": self.freeze_encoder,
            "freeze_backbone": self.freeze_backbone,
            "backbone_input": self.backbone_input,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FusionConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown fusion keys: {sorted(unknown)}", keys=sorted(unknown))
        return cls(**data)


def fuse_concat(unet_features: Tensor, backbone_features: Tensor) -> Tensor:
    """Concatenate along the last axis, U-Net features first."""
    if unet_features.ndim != backbone_features.ndim:
        raise ShapeError(
            f"cannot concatenate {unet_features.shape} with {backbone_features.shape}",
            left=unet_features.shape, right=backbone_features.shape,
        )
    return concat([unet_features, backbone_features], axis=-1)


class AttentionFusion(Module):
    """Two-branch softmax gate over features projected to a common width."""

    def __init__(self, unet_dim: int, backbone_dim: int, common_dim: int, rng, dtype=np.float32):
        super().__init__()
        self.proj_unet = self.add_child("proj_unet", Dense(unet_dim, common_dim, rng, dtype=dtype))
        self.proj_backbone = self.add_child("proj_backbone", Dense(backbone_dim, common_dim, rng, dtype=dtype))
        self.score_unet = self.add_param("score_unet", glorot_uniform(rng, (common_dim,), common_dim, 1, dtype))
        self.score_backbone = self.add_param(
            "score_backbone", glorot_uniform(rng, (common_dim,), common_dim, 1, dtype)
        )
        self.last_weights: np.ndarray | None = None

    def forward(self, unet_features: Tensor, backbone_features: Tensor) -> Tensor:
        out, _ = fuse_attention(unet_features, backbone_features, self)
        return out


def fuse_attention(
    unet_features: Tensor, backbone_features: Tensor, params: AttentionFusion
) -> tuple[Tensor, Tensor]:
    """Project both branches, score each with its vector, mix by softmax(s_u, s_e).

    Accepts [N, d] batches or single [d] vectors; returns (fused, weights [N, 2]).
    """
    single = unet_features.ndim == 1
    if single:
        unet_features = reshape(unet_features, (1, -1))
        backbone_features = reshape(backbone_features, (1, -1))
    p_u = params.proj_unet(unet_features)
    p_e = params.proj_backbone(backbone_features)
    common = p_u.shape[1]
    s_u = matmul(p_u, reshape(params.score_unet, (common, 1)))
    s_e = matmul(p_e, reshape(params.score_backbone, (common, 1)))
    weights = softmax(concat([s_u, s_e], axis=1), axis=1)
    a_u = broadcast_to(slice_axis(weights, 1, 0, 1), p_u.shape)
    a_e = broadcast_to(slice_axis(weights, 1, 1, 2), p_e.shape)
    fused = a_u * p_u + a_e * p_e
    params.last_weights = weights.data.copy()
    if single:
        fused = reshape(fused, (common,))
    return fused, weights


class ClassifierHead(Module):
    def __init__(self, in_features: int, head_dims, num_classes: int, dropout: float, rng,
                 dropout_rng, activation: str = "relu", dtype=np.float32):
        super().__init__()
        self.activation = activation
        self.hidden: list[tuple[Dense, Dropout]] = []
        prev = in_features
        for i, width in enumerate(head_dims):
            dense = self.add_child(f"dense{i}", Dense(prev, width, rng, dtype=dtype))
            drop = self.add_child(f"dropout{i}", Dropout(dropout, dropout_rng))
            self.hidden.append((dense, drop))
            prev = width
        self.out = self.add_child("out", Dense(prev, num_classes, rng, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        for dense, drop in self.hidden:
            x = drop(activate(dense(x), self.activation))
        return self.out(x)


class FusedModel(Module):
    def __init__(self, config: FusionConfig, unet: UNetModel | None, backbone: BackboneModel | None,
                 seed: int, dtype=np.float32):
        super().__init__()
        config.validate()
        self.config = config
        variant = config.variant
        if config.needs_unet and unet is None:
            raise ConfigError(f"variant {variant.value} with backbone_input={config.backbone_input} needs a U-Net")
        if variant.uses_backbone and backbone is None:
            raise ConfigError(f"variant {variant.value} needs a backbone")
        rng = make_rng(seed, STREAM_INIT, 3)
        self.unet = self.add_child("unet", unet) if config.needs_unet else None
        self.backbone = self.add_child("backbone", backbone) if variant.uses_backbone else None
        self.add_buffer("input_mean", np.zeros(3, dtype=dtype))
        self.add_buffer("input_std", np.ones(3, dtype=dtype))

        du = unet.config.feature_dim if variant.uses_unet_features else 0
        de = backbone.config.feature_dim if variant.uses_backbone else 0
        self.fusion = None
        if variant is VariantKind.EFFICIENT_FUSION_UNET_ATTENTION:
            self.fusion = self.add_child("fusion", AttentionFusion(du, de, config.common_dim, rng, dtype))
            head_in = config.common_dim
        else:
            head_in = du + de
        self.head = self.add_child(
            "head",
            ClassifierHead(head_in, config.head_dims, config.num_classes, config.dropout, rng,
                           make_rng(seed, STREAM_DROPOUT), config.activation, dtype),
        )
        self.apply_freeze()

    def apply_freeze(self) -> None:
        if self.unet is not None:
            self.unet.freeze(self.config.freeze_encoder)
        if self.backbone is not None:
            self.backbone.freeze(self.config.freeze_backbone)

    def set_input_stats(self, mean, std) -> None:
        self.set_buffer("input_mean", np.asarray(mean, dtype=self.buffer("input_mean").dtype))
        self.set_buffer("input_std", np.asarray(std, dtype=self.buffer("input_std").dtype))

    def _normalize(self, x: Tensor) -> Tensor:
        mean = Tensor(self.buffer("input_mean").astype(x.dtype))
        std = Tensor(self.buffer("input_std").astype(x.dtype))
        return (x - channel_view(mean, x)) / channel_view(std, x)

    def features(self, batch: Tensor) -> Tensor:
        variant = self.config.variant
        unet_vec = reconstruction = None
        if self.unet is not None:
            if variant.uses_backbone and self.config.backbone_input == "reconstruction":
                reconstruction, feats = self.unet.reconstruct_and_encode(batch)
            else:
                feats = self.unet.encode(batch)
            unet_vec = feats.bottleneck_vector
        if variant is VariantKind.UNET_ONLY:
            return unet_vec
        source = reconstruction if reconstruction is not None else batch
        backbone_vec = self.backbone(self._normalize(source))
        if variant is VariantKind.EFFICIENT_ONLY:
            return backbone_vec
        if variant is VariantKind.EFFICIENT_FUSION_UNET:
            return fuse_concat(unet_vec, backbone_vec)
        fused, _ = fuse_attention(unet_vec, backbone_vec, self.fusion)
        return fused

    def forward(self, batch: Tensor) -> Tensor:
        return self.head(self.features(batch))

    @property
    def attention_weights(self) -> np.ndarray | None:
        return None if self.fusion is None else self.fusion.last_weights


def build_fused_model(
    config: FusionConfig,
    unet_config: UNetConfig,
    backbone_config: BackboneConfig,
    seed: int,
    unet: UNetModel | None = None,
    dtype=np.float32,
) -> FusedModel:
    """Assemble the components ``config.variant`` needs; a supplied ``unet`` is reused as-is."""
    config.validate()
    if config.needs_unet and unet is None:
        unet = build_unet(unet_config, seed, dtype)
    backbone = build_backbone(backbone_config, seed, dtype) if config.variant.uses_backbone else None
    if not config.needs_unet:
        unet = None
    return FusedModel(config, unet, backbone, seed, dtype)


def classify_forward(model: FusedModel, batch: Tensor) -> Tensor:
    logits = model(batch)
    if logits.shape != (batch.shape[0], model.config.num_classes):
        raise ShapeError(f"head produced {logits.shape}", shape=logits.shape)
    return logits


def predict(model: FusedModel, batch: Tensor) -> np.ndarray:
    """Argmax class per row; ties resolve to the lower class index."""
    return argmax(classify_forward(model, batch), axis=1)
