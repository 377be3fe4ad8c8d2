"""Central finite-difference check of tape gradients."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from ..errors import ShapeError
from .core import Tape, Tensor, backward

log = logging.getLogger("capsulefusion.gradcheck")


@dataclass
class GradCheckResult:
    max_relative_error: float
    per_parameter_errors: list[tuple[str, float]] = field(default_factory=list)
    passed: bool = True
    tolerance: float = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def _scalar(value: Tensor) -> float:
    if not isinstance(value, Tensor) or value.size != 1:
        shape = value.shape if isinstance(value, Tensor) else type(value).__name__
        raise ShapeError(f"grad_check function must return a scalar tensor, got {shape}", shape=shape)
    return float(value.data.reshape(()))


def grad_check(
    function: Callable[[], Tensor],
    parameters: Mapping[str, Tensor] | Sequence[Tensor],
    tolerance: float = 1e-4,
    step: float = 1e-4,
) -> GradCheckResult:
    """Compare tape gradients of ``function()`` with (f(θ+h) − f(θ−h)) / 2h per coordinate.

    ``function`` closes over ``parameters`` and is re-evaluated with each coordinate nudged
    in place; parameters are restored bit-exactly afterwards.
    """
    if step <= 0:
        raise ShapeError(f"step must be positive, got {step}", step=step)
    if not isinstance(parameters, Mapping):
        parameters = {f"p{i}": p for i, p in enumerate(parameters)}

    for p in parameters.values():
        p.data = np.ascontiguousarray(p.data)
        p.requires_grad = True
        p.grad = None
    with Tape() as tape:
        out = function()
    _scalar(out)
    backward(tape, out)

    errors: list[tuple[str, float]] = []
    for name, p in parameters.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = _scalar(function())
            flat[i] = orig - step
            f_minus = _scalar(function())
            flat[i] = orig
            numeric.reshape(-1)[i] = (f_plus - f_minus) / (2 * step)
        err = float(relative_error(analytic, numeric).max()) if p.size else 0.0
        errors.append((name, err))
        log.debug(f"{name}: max relative error {err:.3e}")

    worst = max((e for _, e in errors), default=0.0)
    return GradCheckResult(
        max_relative_error=worst,
        per_parameter_errors=errors,
        passed=worst < tolerance,
        tolerance=tolerance,
    )
