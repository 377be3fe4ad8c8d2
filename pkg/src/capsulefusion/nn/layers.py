"""Parameterised layers: convolution, dense, normalisation, dropout, self-attention."""
from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigError
from ..tensor import (
    Tensor,
    batched_matmul,
    broadcast_to,
    conv2d,
    dropout,
    elementwise,
    matmul,
    reduce_mean,
    relu,
    reshape,
    silu,
    softmax,
    square,
    transpose,
)
from .module import Module

ACTIVATIONS = ("relu", "silu")
NORMS = ("batch", "group")


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float32) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def activate(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "silu":
        return silu(x)
    raise ConfigError(f"unknown activation {kind!r}", activation=kind, valid=ACTIVATIONS)


def channel_view(v: Tensor, like: Tensor) -> Tensor:
    """Broadcast a per-channel vector [C] over [N,C,H,W]."""
    return broadcast_to(reshape(v, (1, v.shape[0], 1, 1)), like.shape)


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel, rng, stride=1, padding="same",
                 groups=1, bias=True, dtype=np.float32):
        super().__init__()
        self.stride, self.padding, self.groups = stride, padding, groups
        fan_in = (in_channels // groups) * kernel * kernel
        self.weight = self.add_param(
            "weight", he_uniform(rng, (out_channels, in_channels // groups, kernel, kernel), fan_in, dtype)
        )
        self.bias = self.add_param("bias", np.zeros(out_channels, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding, groups=self.groups)


class Dense(Module):
    """y = x·W + b with W of shape [in, out]."""

    def __init__(self, in_features, out_features, rng, bias=True, zero_init=False, dtype=np.float32):
        super().__init__()
        w = (np.zeros((in_features, out_features), dtype=dtype) if zero_init
             else he_uniform(rng, (in_features, out_features), in_features, dtype))
        self.weight = self.add_param("weight", w)
        self.bias = self.add_param("bias", np.zeros(out_features, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        if self.bias is not None:
            y = y + broadcast_to(reshape(self.bias, (1, -1)), y.shape)
        return y


class BatchNorm2d(Module):
    """Batch normalisation with running statistics.

    running ← momentum·running + (1 − momentum)·batch; the running variance uses the
    unbiased batch estimate.
    """

    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = self.add_param("gamma", np.ones(channels, dtype=dtype))
        self.beta = self.add_param("beta", np.zeros(channels, dtype=dtype))
        self.add_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.add_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        if self.training:
            mu = reduce_mean(x, axis=(0, 2, 3), keepdims=True)
            centered = x - broadcast_to(mu, x.shape)
            var = reduce_mean(square(centered), axis=(0, 2, 3), keepdims=True)
            std = elementwise("sqrt", var + self.eps)
            x_hat = centered / broadcast_to(std, x.shape)
            m = x.shape[0] * x.shape[2] * x.shape[3]
            unbiased = var.data.reshape(-1) * (m / max(m - 1, 1))
            rm, rv = self.buffer("running_mean"), self.buffer("running_var")
            self.set_buffer("running_mean", (self.momentum * rm + (1 - self.momentum) * mu.data.reshape(-1)).astype(rm.dtype))
            self.set_buffer("running_var", (self.momentum * rv + (1 - self.momentum) * unbiased).astype(rv.dtype))
        else:
            rm = self.buffer("running_mean").reshape(1, -1, 1, 1)
            rv = self.buffer("running_var").reshape(1, -1, 1, 1)
            shift = Tensor(np.broadcast_to(rm, x.shape).astype(x.dtype))
            scale = Tensor(np.broadcast_to(np.sqrt(rv + self.eps), x.shape).astype(x.dtype))
            x_hat = (x - shift) / scale
        return x_hat * channel_view(self.gamma, x) + channel_view(self.beta, x)


class GroupNorm(Module):
    """Group normalisation; the group count falls back to gcd(groups, channels)."""

    def __init__(self, channels, groups=8, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.groups = math.gcd(groups, channels)
        self.eps = eps
        self.gamma = self.add_param("gamma", np.ones(channels, dtype=dtype))
        self.beta = self.add_param("beta", np.zeros(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        g = reshape(x, (n, self.groups, (c // self.groups) * h * w))
        mu = reduce_mean(g, axis=2, keepdims=True)
        centered = g - broadcast_to(mu, g.shape)
        var = reduce_mean(square(centered), axis=2, keepdims=True)
        std = elementwise("sqrt", var + self.eps)
        x_hat = reshape(centered / broadcast_to(std, g.shape), x.shape)
        return x_hat * channel_view(self.gamma, x) + channel_view(self.beta, x)


def make_norm(kind: str, channels: int, dtype=np.float32) -> Module:
    if kind == "batch":
        return BatchNorm2d(channels, dtype=dtype)
    if kind == "group":
        return GroupNorm(channels, dtype=dtype)
    raise ConfigError(f"unknown norm {kind!r}", norm=kind, valid=NORMS)


class Dropout(Module):
    def __init__(self, rate: float, rng: np.random.Generator | None):
        super().__init__()
        self.rate = rate
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        return dropout(x, self.rate, self.rng, self.training)


class SpatialSelfAttention(Module):
    """Multi-head self-attention over the H·W positions of a feature map, with a residual add."""

    def __init__(self, channels: int, heads: int, rng, dtype=np.float32):
        super().__init__()
        if channels % heads:
            raise ConfigError(f"{channels} channels not divisible by {heads} heads",
                              channels=channels, heads=heads)
        self.heads = heads
        self.head_dim = channels // heads
        for name in ("query", "key", "value", "out"):
            self.add_param(name, glorot_uniform(rng, (channels, channels), channels, channels, dtype))

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        t, hd, d = h * w, self.heads, self.head_dim
        tokens = reshape(transpose(reshape(x, (n, c, t)), (0, 2, 1)), (n * t, c))

        def split(p: Tensor) -> Tensor:
            return reshape(transpose(reshape(matmul(tokens, p), (n, t, hd, d)), (0, 2, 1, 3)), (n * hd, t, d))

        q, k, v = (split(self._params[name]) for name in ("query", "key", "value"))
        scores = batched_matmul(q, transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(d))
        mixed = batched_matmul(softmax(scores, axis=-1), v)
        merged = reshape(transpose(reshape(mixed, (n, hd, t, d)), (0, 2, 1, 3)), (n * t, c))
        projected = matmul(merged, self._params["out"])
        back = reshape(transpose(reshape(projected, (n, t, c)), (0, 2, 1)), x.shape)
        return x + back
