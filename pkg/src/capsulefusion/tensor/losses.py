from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ShapeError
from .core import Tensor, record


def softmax_cross_entropy(
    logits: Tensor, labels: Sequence[int] | np.ndarray, class_weights: Sequence[float] | None = None
) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(``logits``).

    With ``class_weights`` each sample counts ``w[label]`` and the sum is divided by the
    total weight, so uniform weights reproduce the plain mean.
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits must be [N,K], got {logits.shape}", shape=logits.shape)
    n, k = logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != n:
        raise ShapeError(f"{labels.shape[0]} labels for {n} logit rows", rows=n, labels=labels.shape[0])
    bad = (labels < 0) | (labels >= k)
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        raise ShapeError(
            f"label {int(labels[first])} at row {first} outside [0, {k})", row=first, classes=k
        )

    x = logits.data
    shifted = x - x.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(n)
    nll = -log_p[rows, labels]

    if class_weights is None:
        sample_w = np.ones(n, dtype=x.dtype)
    else:
        cw = np.asarray(class_weights, dtype=x.dtype)
        if cw.shape != (k,):
            raise ShapeError(f"class_weights must have {k} entries, got {cw.shape}")
        sample_w = cw[labels]
    total = sample_w.sum()
    loss = np.asarray((sample_w * nll).sum() / total, dtype=x.dtype)

    def back(g):
        p = np.exp(log_p)
        p[rows, labels] -= 1.0
        return (g * p * (sample_w / total)[:, None],)

    return record("softmax_cross_entropy", (logits,), loss, back)


def mean_squared_error(prediction: Tensor, target: Tensor, weights: np.ndarray | None = None) -> Tensor:
    """Mean of squared differences, optionally over the pixels where ``weights`` is 1."""
    if prediction.shape != target.shape:
        raise ShapeError(
            f"shape mismatch {prediction.shape} vs {target.shape}",
            left=prediction.shape, right=target.shape,
        )
    diff = prediction.data - target.data.astype(prediction.dtype, copy=False)
    if weights is None:
        count = diff.size
        w = None
    else:
        w = np.broadcast_to(weights, diff.shape).astype(prediction.dtype)
        count = float(w.sum())
        diff = diff * w
    loss = np.asarray((diff * diff).sum() / count, dtype=prediction.dtype)

    def back(g):
        d = 2.0 * diff / count * g
        if w is not None:
            d = d * w
        return (d.astype(prediction.dtype, copy=False), -d.astype(target.dtype, copy=False))

    return record("mse", (prediction, target), loss, back)
