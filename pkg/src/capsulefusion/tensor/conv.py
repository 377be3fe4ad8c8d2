"""Spatial ops on [N, C, H, W] tensors: convolution, pooling, upsampling."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from .core import Tensor, record

PADDINGS = ("valid", "same")


def _pad_amount(padding: str, k: int) -> int:
    if padding == "valid":
        return 0
    if padding == "same":
        return (k - 1) // 2
    raise ShapeError(f"unknown padding {padding!r}", padding=padding, valid=PADDINGS)


def output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Strided view [..., Ho, Wo, kh, kw] over the last two axes."""
    win = sliding_window_view(x, (kh, kw), axis=(-2, -1))
    return win[..., ::stride, ::stride, :, :]


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: str = "valid",
    groups: int = 1,
) -> Tensor:
    """Cross-correlation of ``x`` [N,C,H,W] with ``kernel`` [F,C/groups,kh,kw], zero padded.

    ``groups == C == F`` gives a depthwise convolution.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    if stride < 1:
        raise ShapeError(f"conv2d stride must be positive, got {stride}", stride=stride)
    n, c, h, w = x.shape
    f, cg, kh, kw = kernel.shape
    if c % groups or f % groups or cg * groups != c:
        raise ShapeError(
            f"conv2d: input channels {c} and kernel {kernel.shape} disagree for groups={groups}",
            input=x.shape, kernel=kernel.shape, groups=groups,
        )
    ph, pw = _pad_amount(padding, kh), _pad_amount(padding, kw)
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * ph}x{w + 2 * pw}",
            input=x.shape, kernel=kernel.shape, padding=padding,
        )
    if bias is not None and bias.shape != (f,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {f} filters")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x.data
    ho, wo = output_size(h, kh, stride, ph), output_size(w, kw, stride, pw)
    fg = f // groups
    xg = xp.reshape(n, groups, cg, xp.shape[2], xp.shape[3])
    win = _windows(xg, kh, kw, stride)  # n, g, cg, ho, wo, kh, kw
    kg = kernel.data.reshape(groups, fg, cg, kh, kw)
    out = np.einsum("ngchwij,gfcij->ngfhw", win, kg, optimize=True).reshape(n, f, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, f, 1, 1)

    def back(g):
        gg = g.reshape(n, groups, fg, ho, wo)
        dk = np.einsum("ngchwij,ngfhw->gfcij", win, gg, optimize=True).reshape(kernel.shape)
        dwin = np.einsum("gfcij,ngfhw->ngchwij", kg, gg, optimize=True)
        dxp = np.zeros_like(xg)
        for i in range(kh):
            for j in range(kw):
                dxp[..., i:i + stride * ho:stride, j:j + stride * wo:stride] += dwin[..., i, j]
        dxp = dxp.reshape(xp.shape)
        dx = dxp[:, :, ph:ph + h, pw:pw + w]
        grads = [dx, dk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record("conv2d", inputs, out.astype(x.dtype, copy=False), back)


def pool2d(x: Tensor, kind: str = "max", window: int = 2, stride: int | None = None) -> Tensor:
    """Max or average pooling; max routes the gradient to the first maximum in row-major order."""
    stride = window if stride is None else stride
    if x.ndim != 4:
        raise ShapeError(f"pool2d expects [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    if window < 1 or stride < 1 or window > h or window > w:
        raise ShapeError(
            f"pool2d: window {window} exceeds input {h}x{w}", input=x.shape, window=window
        )
    if kind not in ("max", "avg"):
        raise ShapeError(f"unknown pooling kind {kind!r}", kind=kind)
    ho, wo = output_size(h, window, stride, 0), output_size(w, window, stride, 0)
    win = _windows(x.data, window, window, stride).reshape(n, c, ho, wo, window * window)

    if kind == "avg":
        out = win.mean(axis=-1)
        scale = 1.0 / (window * window)

        def back(g):
            dx = np.zeros_like(x.data)
            share = g * scale
            for i in range(window):
                for j in range(window):
                    dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += share
            return (dx,)

        return record("avg_pool2d", (x,), out, back)

    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def back(g):
        dx = np.zeros_like(x.data)
        for k in range(window * window):
            i, j = divmod(k, window)
            dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += g * (arg == k)
        return (dx,)

    return record("max_pool2d", (x,), out, back)


def global_avg_pool(x: Tensor) -> Tensor:
    """[N,C,H,W] → [N,C] spatial mean."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    return record(
        "global_avg_pool",
        (x,),
        x.data.mean(axis=(2, 3)),
        lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),),
    )


def upsample2d(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour upsampling; the backward rule sums each replicated block."""
    if factor < 1:
        raise ShapeError(f"upsample2d factor must be >= 1, got {factor}", factor=factor)
    if x.ndim != 4:
        raise ShapeError(f"upsample2d expects [N,C,H,W], got {x.shape}")
    if factor == 1:
        return record("upsample2d", (x,), x.data.copy(), lambda g: (g,))
    n, c, h, w = x.shape
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)

    def back(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return record("upsample2d", (x,), out, back)
