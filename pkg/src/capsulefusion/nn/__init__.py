from .layers import (
    ACTIVATIONS,
    NORMS,
    BatchNorm2d,
    Conv2d,
    Dense,
    Dropout,
    GroupNorm,
    SpatialSelfAttention,
    activate,
    channel_view,
    glorot_uniform,
    he_uniform,
    make_norm,
)
from .module import Module

__all__ = [
    "ACTIVATIONS", "NORMS", "BatchNorm2d", "Conv2d", "Dense", "Dropout", "GroupNorm", "Module",
    "SpatialSelfAttention", "activate", "channel_view", "glorot_uniform", "he_uniform", "make_norm",
]
