"""Adam with bias-corrected moment estimates."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..errors import ShapeError
from ..tensor import Tensor


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> dict[str, np.ndarray]:
    """One update over every parameter that has a gradient; returns the new parameter arrays.

    ``state`` is updated in place: t is incremented first, then
    m ← β1·m + (1−β1)·g, v ← β2·v + (1−β2)·g², θ ← θ − lr·m̂/(√v̂ + ε).
    """
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    updated = {}
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            updated[name] = theta
            continue
        if g.shape != theta.shape:
            raise ShapeError(f"{name}: gradient {g.shape} vs parameter {theta.shape}", name=name)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        elif m.shape != theta.shape:
            raise ShapeError(f"{name}: optimizer moment {m.shape} vs parameter {theta.shape}", name=name)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        state.m[name], state.v[name] = m.astype(theta.dtype), v.astype(theta.dtype)
        m_hat = m / bc1
        v_hat = v / bc2
        updated[name] = (theta - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(theta.dtype)
    return updated


class Adam:
    """Owns an AdamState for the trainable parameters of a model.

    Parameters with ``requires_grad`` off are never touched.
    """

    def __init__(self, named_params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, state: AdamState | None = None):
        self.params: dict[str, Tensor] = {n: p for n, p in named_params if p.requires_grad}
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = state or AdamState()

    @classmethod
    def from_config(cls, named_params, config) -> "Adam":
        return cls(named_params, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        grads = {n: p.grad for n, p in self.params.items() if p.grad is not None}
        updated = adam_step(
            {n: p.data for n, p in self.params.items()}, grads, self.state,
            self.lr, self.beta1, self.beta2, self.eps,
        )
        for name, data in updated.items():
            self.params[name].data = data

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{n}": a for n, a in self.state.m.items()}
        out.update({f"adam.v.{n}": a for n, a in self.state.v.items()})
        return out
