"""Differentiable elementwise, linear-algebra, reduction and movement ops."""
from __future__ import annotations

from numbers import Number
from typing import Sequence

import numpy as np

from ..errors import DomainError, ShapeError
from .core import Tensor, as_tensor, record

BINARY_KINDS = ("add", "sub", "mul", "div")
UNARY_KINDS = ("relu", "sigmoid", "exp", "log", "square", "sqrt", "tanh", "silu", "neg")
ELEMENTWISE_KINDS = BINARY_KINDS + UNARY_KINDS


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument never overflows
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype, copy=False)


def _unary(kind: str, a: Tensor) -> Tensor:
    x = a.data
    if kind == "relu":
        y = np.maximum(x, 0).astype(x.dtype, copy=False)
        return record(kind, (a,), y, lambda g: ((x > 0) * g,))
    if kind == "sigmoid":
        y = _sigmoid(x)
        return record(kind, (a,), y, lambda g: (g * y * (1 - y),))
    if kind == "exp":
        y = np.exp(x)
        return record(kind, (a,), y, lambda g: (g * y,))
    if kind == "log":
        if np.any(x <= 0):
            raise DomainError("log of non-positive value", op=kind, minimum=float(x.min()))
        return record(kind, (a,), np.log(x), lambda g: (g / x,))
    if kind == "square":
        return record(kind, (a,), x * x, lambda g: (2 * x * g,))
    if kind == "sqrt":
        if np.any(x < 0):
            raise DomainError("sqrt of negative value", op=kind, minimum=float(x.min()))
        y = np.sqrt(x)
        return record(kind, (a,), y, lambda g: (g / (2 * y),))
    if kind == "tanh":
        y = np.tanh(x)
        return record(kind, (a,), y, lambda g: (g * (1 - y * y),))
    if kind == "silu":
        s = _sigmoid(x)
        return record(kind, (a,), x * s, lambda g: (g * (s + x * s * (1 - s)),))
    if kind == "neg":
        return record(kind, (a,), -x, lambda g: (-g,))
    raise DomainError(f"unknown elementwise op {kind!r}", op=kind)


def elementwise(kind: str, a: Tensor, b: Tensor | Number | None = None) -> Tensor:
    """Apply an elementwise op. Binary ops need equal shapes or a scalar ``b``."""
    a = as_tensor(a)
    if kind in UNARY_KINDS:
        return _unary(kind, a)
    if kind not in BINARY_KINDS:
        raise DomainError(f"unknown elementwise op {kind!r}", op=kind, valid=ELEMENTWISE_KINDS)

    scalar = isinstance(b, Number) or (isinstance(b, Tensor) and b.ndim == 0)
    if isinstance(b, Number):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    if b is None:
        raise ShapeError(f"{kind} needs a second operand", op=kind)
    if not scalar and a.shape != b.shape:
        raise ShapeError(
            f"{kind}: shape mismatch {a.shape} vs {b.shape}", op=kind, left=a.shape, right=b.shape
        )
    x, y = a.data, b.data.astype(a.dtype, copy=False)

    def fold(g: np.ndarray) -> np.ndarray:
        return np.asarray(g.sum(), dtype=b.dtype) if scalar else g

    if kind == "add":
        return record(kind, (a, b), x + y, lambda g: (g, fold(g)))
    if kind == "sub":
        return record(kind, (a, b), x - y, lambda g: (g, fold(-g)))
    if kind == "mul":
        return record(kind, (a, b), x * y, lambda g: (g * y, fold(g * x)))
    if np.any(y == 0):
        raise DomainError("division by zero", op=kind)
    return record(kind, (a, b), x / y, lambda g: (g / y, fold(-g * x / (y * y))))


def relu(a: Tensor) -> Tensor:
    return elementwise("relu", a)


def sigmoid(a: Tensor) -> Tensor:
    return elementwise("sigmoid", a)


def silu(a: Tensor) -> Tensor:
    return elementwise("silu", a)


def square(a: Tensor) -> Tensor:
    return elementwise("square", a)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """[m×k]·[k×n] → [m×n]."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}", left=a.shape, right=b.shape)
    x, y = a.data, b.data
    return record("matmul", (a, b), x @ y, lambda g: (g @ y.T, x.T @ g))


def batched_matmul(a: Tensor, b: Tensor) -> Tensor:
    """[B×m×k]·[B×k×n] → [B×m×n]."""
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(
            f"batched_matmul: cannot multiply {a.shape} by {b.shape}", left=a.shape, right=b.shape
        )
    x, y = a.data, b.data
    return record(
        "batched_matmul",
        (a, b),
        np.matmul(x, y),
        lambda g: (np.matmul(g, y.transpose(0, 2, 1)), np.matmul(x.transpose(0, 2, 1), g)),
    )


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    try:
        y = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}", source=src) from exc
    return record("reshape", (a,), y, lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return record("transpose", (a,), a.data.transpose(axes), lambda g: (g.transpose(inverse),))


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Broadcast ``a`` to ``shape``; the backward rule sums over the broadcast axes."""
    shape = tuple(shape)
    src = a.shape
    try:
        y = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise ShapeError(f"broadcast_to: {src} is not broadcastable to {shape}", source=src) from exc
    lead = len(shape) - len(src)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, d in enumerate(src) if d == 1 and shape[i + lead] != 1
    )

    def back(g):
        r = g.sum(axis=axes, keepdims=True) if axes else g
        return (r.reshape(src),)

    return record("broadcast_to", (a,), np.ascontiguousarray(y), back)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            d1 != d2 for i, (d1, d2) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)
        ):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape}", axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return record("concat", tensors, np.concatenate([t.data for t in tensors], axis=axis), back)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def back(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return record("slice", (a,), a.data[index].copy(), back)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return record("sum", (a,), np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), back)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = a.shape
    count = a.size if axis is None else int(np.prod([src[i] for i in np.atleast_1d(axis)]))

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, src).copy(),)

    return record("mean", (a,), np.asarray(a.data.mean(axis=axis, keepdims=keepdims)), back)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-stabilised softmax along ``axis``."""
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record("softmax", (a,), y, back)


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``rate`` is 0."""
    if not training or rate <= 0:
        return a
    if rng is None:
        raise DomainError("dropout in training mode needs a generator", rate=rate)
    keep = (rng.random(a.shape) >= rate).astype(a.dtype) / (1.0 - rate)
    return record("dropout", (a,), a.data * keep, lambda g: (g * keep,))


def argmax(a: Tensor | np.ndarray, axis: int = -1) -> np.ndarray:
    """Index of the maximum; ties go to the lowest index."""
    data = a.data if isinstance(a, Tensor) else np.asarray(a)
    return np.argmax(data, axis=axis)
