"""Finite-difference gradient checks for every differentiable op plus one small full pipeline.

Each case builds a scalar function of float64 leaves. Inputs are drawn away from the kinks
of relu and max pooling, where central differences are not meaningful.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .errors import GradCheckFailure
from .models import BackboneConfig, FusionConfig, StageSpec, UNetConfig, VariantKind, build_fused_model
from .nn import BatchNorm2d, GroupNorm, SpatialSelfAttention
from .models.backbone import SqueezeExcite
from .models.fusion import AttentionFusion, fuse_concat
from .rng import make_rng
from .tensor.ops import BINARY_KINDS

log = logging.getLogger("capsulefusion.gradsuite")

F64 = np.float64
Builder = Callable[[np.random.Generator, int], tuple[Callable[[], T.Tensor], dict[str, T.Tensor]]]
VARIANTS = 3


@dataclass
class CaseResult:
    op: str
    max_relative_error: float
    passed: bool
    worst_parameter: str = ""


def _leaf(data: np.ndarray, name: str) -> T.Tensor:
    return T.Tensor(np.asarray(data, dtype=F64), requires_grad=True, name=name)


def _normal(rng, shape) -> np.ndarray:
    return rng.standard_normal(shape)


def _away_from_zero(rng, shape, margin=0.1) -> np.ndarray:
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(margin, 1.0, size=shape)


def _positive(rng, shape) -> np.ndarray:
    return rng.uniform(0.5, 2.0, size=shape)


def _distinct(rng, shape) -> np.ndarray:
    # values 0.1 apart so no pooling window has a near tie
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.1).reshape(shape)


def _project(out: T.Tensor, rng) -> T.Tensor:
    """Scalar Σ w·out with fixed random weights, so every output element matters differently."""
    w = T.Tensor(rng.standard_normal(out.shape))
    return T.reduce_sum(out * w)


SHAPES = [(3,), (2, 3), (2, 2, 3)]


def _unary(kind: str, draw) -> Builder:
    def build(rng, v):
        x = _leaf(draw(rng, SHAPES[v]), "x")
        w = T.Tensor(rng.standard_normal(SHAPES[v]))
        return (lambda: T.reduce_sum(T.elementwise(kind, x) * w)), {"x": x}
    return build


def _binary(kind: str) -> Builder:
    def build(rng, v):
        shape = SHAPES[v]
        a = _leaf(_normal(rng, shape), "a")
        b = _leaf(_away_from_zero(rng, shape, 0.5) if kind == "div" else _normal(rng, shape), "b")
        w = T.Tensor(rng.standard_normal(shape))
        return (lambda: T.reduce_sum(T.elementwise(kind, a, b) * w)), {"a": a, "b": b}
    return build


def _matmul(rng, v):
    m, k, n = [(4, 5, 3), (1, 3, 2), (3, 2, 4)][v]
    a, b = _leaf(_normal(rng, (m, k)), "a"), _leaf(_normal(rng, (k, n)), "b")
    w = T.Tensor(rng.standard_normal((m, n)))
    return (lambda: T.reduce_sum(T.matmul(a, b) * w)), {"a": a, "b": b}


def _batched_matmul(rng, v):
    bsz, m, k, n = [(2, 3, 4, 2), (1, 2, 2, 2), (3, 1, 3, 2)][v]
    a, b = _leaf(_normal(rng, (bsz, m, k)), "a"), _leaf(_normal(rng, (bsz, k, n)), "b")
    w = T.Tensor(rng.standard_normal((bsz, m, n)))
    return (lambda: T.reduce_sum(T.batched_matmul(a, b) * w)), {"a": a, "b": b}


def _reshape(rng, v):
    shape, target = [((2, 6), (3, 4)), ((2, 3, 2), (12,)), ((4,), (2, 2))][v]
    x = _leaf(_normal(rng, shape), "x")
    w = T.Tensor(rng.standard_normal(target))
    return (lambda: T.reduce_sum(T.reshape(x, target) * w)), {"x": x}


def _transpose(rng, v):
    shape, axes = [((2, 3), (1, 0)), ((2, 3, 4), (2, 0, 1)), ((1, 2, 3, 2), (0, 2, 1, 3))][v]
    x = _leaf(_normal(rng, shape), "x")
    return (lambda: _project(T.transpose(x, axes), make_rng(v, 99))), {"x": x}


def _broadcast(rng, v):
    shape, target = [((1, 3), (4, 3)), ((3, 1), (3, 4)), ((1, 2, 1, 1), (2, 2, 3, 3))][v]
    x = _leaf(_normal(rng, shape), "x")
    w = T.Tensor(rng.standard_normal(target))
    return (lambda: T.reduce_sum(T.broadcast_to(x, target) * w)), {"x": x}


def _concat(rng, v):
    sa, sb, axis = [((2, 3), (2, 2), 1), ((1, 3), (2, 3), 0), ((1, 2, 2, 2), (1, 3, 2, 2), 1)][v]
    a, b = _leaf(_normal(rng, sa), "a"), _leaf(_normal(rng, sb), "b")
    return (lambda: _project(T.concat([a, b], axis=axis), make_rng(v, 98))), {"a": a, "b": b}


def _slice(rng, v):
    shape, axis, start, stop = [((4, 3), 0, 1, 3), ((2, 5), 1, 0, 2), ((2, 4, 3), 1, 2, 4)][v]
    x = _leaf(_normal(rng, shape), "x")
    return (lambda: _project(T.slice_axis(x, axis, start, stop), make_rng(v, 97))), {"x": x}


def _reduce(fn) -> Builder:
    def build(rng, v):
        shape, axis, keep = [((3, 4), None, False), ((2, 3, 4), 1, True), ((2, 3, 2, 2), (0, 2, 3), False)][v]
        x = _leaf(_normal(rng, shape), "x")
        seed = 96 if fn is T.reduce_sum else 95
        return (lambda: _project(fn(x, axis=axis, keepdims=keep), make_rng(v, seed))), {"x": x}
    return build


def _softmax(rng, v):
    shape, axis = [((2, 5), -1), ((4, 3), 0), ((2, 3, 4), 1)][v]
    x = _leaf(_normal(rng, shape), "x")
    return (lambda: _project(T.softmax(x, axis=axis), make_rng(v, 94))), {"x": x}


def _dropout(rng, v):
    shape = SHAPES[v]
    x = _leaf(_normal(rng, shape), "x")
    return (lambda: _project(T.dropout(x, 0.5, make_rng(v, 93), True), make_rng(v, 92))), {"x": x}


def _conv(rng, v):
    n, c, h, o, k, stride, padding, groups, bias = [
        (1, 2, 5, 3, 3, 1, "same", 1, True),
        (2, 2, 7, 2, 3, 2, "valid", 1, False),
        (1, 3, 6, 3, 5, 1, "same", 3, True),
    ][v]
    x = _leaf(_normal(rng, (n, c, h, h)), "x")
    kernel = _leaf(_normal(rng, (o, c // groups, k, k)) * 0.5, "kernel")
    params = {"x": x, "kernel": kernel}
    b = None
    if bias:
        b = params["bias"] = _leaf(_normal(rng, (o,)), "bias")
    fn = lambda: _project(T.conv2d(x, kernel, b, stride=stride, padding=padding, groups=groups), make_rng(v, 91))
    return fn, params


def _pool(kind: str) -> Builder:
    def build(rng, v):
        shape, window, stride = [((1, 1, 4, 4), 2, 2), ((1, 2, 5, 5), 3, 1), ((2, 2, 6, 6), 2, 2)][v]
        x = _leaf(_distinct(rng, shape) if kind == "max" else _normal(rng, shape), "x")
        return (lambda: _project(T.pool2d(x, kind, window, stride), make_rng(v, 90))), {"x": x}
    return build


def _global_pool(rng, v):
    shape = [(1, 2, 3, 3), (2, 3, 2, 2), (1, 1, 4, 4)][v]
    x = _leaf(_normal(rng, shape), "x")
    return (lambda: _project(T.global_avg_pool(x), make_rng(v, 89))), {"x": x}


def _upsample(rng, v):
    shape, factor = [((1, 1, 2, 2), 2), ((1, 2, 2, 3), 3), ((2, 1, 3, 3), 2)][v]
    x = _leaf(_normal(rng, shape), "x")
    return (lambda: _project(T.upsample2d(x, factor), make_rng(v, 88))), {"x": x}


def _cross_entropy(rng, v):
    n, k, weighted = [(4, 10, False), (3, 5, True), (1, 3, False)][v]
    logits = _leaf(_normal(rng, (n, k)), "logits")
    labels = rng.integers(0, k, size=n)
    weights = rng.uniform(0.5, 2.0, size=k) if weighted else None
    return (lambda: T.softmax_cross_entropy(logits, labels, weights)), {"logits": logits}


def _mse(rng, v):
    shape = [(2, 3), (1, 3, 4, 4), (4,)][v]
    pred = _leaf(_normal(rng, shape), "prediction")
    target = T.Tensor(_normal(rng, shape))
    mask = None if v == 2 else rng.random(shape) < 0.6
    if mask is not None:
        mask.reshape(-1)[0] = True
    return (lambda: T.mean_squared_error(pred, target, mask)), {"prediction": pred}


def _module_case(make, shape_of) -> Builder:
    def build(rng, v):
        module = make(rng, v)
        module.train()
        x = _leaf(_normal(rng, shape_of(v)), "x")
        params = {"x": x, **dict(module.named_parameters())}
        return (lambda: _project(module(x), make_rng(v, 87))), params
    return build


def _attention_fusion(rng, v):
    n, du, de, common = [(2, 4, 3, 5), (1, 3, 3, 2), (3, 2, 5, 4)][v]
    fusion = AttentionFusion(du, de, common, rng, dtype=F64)
    u, e = _leaf(_normal(rng, (n, du)), "u"), _leaf(_normal(rng, (n, de)), "e")
    params = {"u": u, "e": e, **dict(fusion.named_parameters())}
    return (lambda: _project(fusion(u, e), make_rng(v, 86))), params


def _fuse_concat(rng, v):
    n, du, de = [(2, 3, 4), (1, 2, 2), (3, 1, 5)][v]
    u, e = _leaf(_normal(rng, (n, du)), "u"), _leaf(_normal(rng, (n, de)), "e")
    return (lambda: _project(fuse_concat(u, e), make_rng(v, 85))), {"u": u, "e": e}


CASES: dict[str, Builder] = {
    **{k: _binary(k) for k in BINARY_KINDS},
    "relu": _unary("relu", _away_from_zero),
    "sigmoid": _unary("sigmoid", _normal),
    "exp": _unary("exp", _normal),
    "log": _unary("log", _positive),
    "square": _unary("square", _normal),
    "sqrt": _unary("sqrt", _positive),
    "tanh": _unary("tanh", _normal),
    "silu": _unary("silu", _normal),
    "neg": _unary("neg", _normal),
    "matmul": _matmul,
    "batched_matmul": _batched_matmul,
    "reshape": _reshape,
    "transpose": _transpose,
    "broadcast_to": _broadcast,
    "concat": _concat,
    "slice_axis": _slice,
    "reduce_sum": _reduce(T.reduce_sum),
    "reduce_mean": _reduce(T.reduce_mean),
    "softmax": _softmax,
    "dropout": _dropout,
    "conv2d": _conv,
    "max_pool": _pool("max"),
    "avg_pool": _pool("avg"),
    "global_avg_pool": _global_pool,
    "upsample2d": _upsample,
    "softmax_cross_entropy": _cross_entropy,
    "mean_squared_error": _mse,
    "batch_norm": _module_case(
        lambda rng, v: BatchNorm2d([2, 3, 1][v], dtype=F64), lambda v: [(3, 2, 2, 2), (2, 3, 3, 3), (4, 1, 2, 2)][v]
    ),
    "group_norm": _module_case(
        lambda rng, v: GroupNorm([4, 6, 8][v], groups=2, dtype=F64), lambda v: [(1, 4, 2, 2), (2, 6, 2, 2), (1, 8, 3, 3)][v]
    ),
    "self_attention": _module_case(
        lambda rng, v: SpatialSelfAttention([4, 4, 6][v], [2, 1, 3][v], rng, dtype=F64),
        lambda v: [(1, 4, 2, 2), (2, 4, 2, 1), (1, 6, 2, 2)][v],
    ),
    "squeeze_excite": _module_case(
        lambda rng, v: SqueezeExcite([4, 8, 6][v], 0.25, rng, dtype=F64),
        lambda v: [(2, 4, 2, 2), (1, 8, 3, 3), (2, 6, 1, 2)][v],
    ),
    "attention_fusion": _attention_fusion,
    "fuse_concat": _fuse_concat,
}


def pipeline_case(seed: int = 0):
    """Tiny attention-fusion model in float64 with smooth activations and average pooling."""
    unet = UNetConfig(base_channels=4, depth=1, attention_heads=2, pool="avg", activation="silu")
    backbone = BackboneConfig(
        stem_channels=8, stages=(StageSpec(1, 8, 1, 1, 3), StageSpec(2, 8, 1, 2, 3)), feature_dim=8,
    )
    fusion = FusionConfig(
        variant=VariantKind.EFFICIENT_FUSION_UNET_ATTENTION, common_dim=8, head_dims=(8,), dropout=0.0,
        freeze_encoder=False, activation="silu",
    )
    model = build_fused_model(fusion, unet, backbone, seed, dtype=F64)
    model.astype(F64)
    model.train()
    rng = make_rng(seed, 84)
    batch = T.Tensor(rng.uniform(0.0, 1.0, size=(2, 3, 8, 8)))
    labels = rng.integers(0, 10, size=2)
    params = dict(model.named_parameters())
    return (lambda: T.softmax_cross_entropy(model(batch), labels)), params


def run_case(name: str, builder: Builder, seed: int = 0, tolerance: float = 1e-4) -> CaseResult:
    worst, worst_param = 0.0, ""
    for v in range(VARIANTS):
        fn, params = builder(make_rng(seed, 83, v), v)
        result = T.grad_check(fn, params, tolerance=tolerance, step=1e-4)
        if result.max_relative_error >= worst:
            worst = result.max_relative_error
            worst_param = max(result.per_parameter_errors, key=lambda e: e[1], default=("", 0.0))[0]
    return CaseResult(name, worst, worst < tolerance, worst_param)


def run_suite(seed: int = 0, tolerance: float = 1e-4, include_pipeline: bool = True,
              only: list[str] | None = None) -> list[CaseResult]:
    results = []
    for name, builder in CASES.items():
        if only and name not in only:
            continue
        res = run_case(name, builder, seed, tolerance)
        log.info("%-22s %s  max rel err %.2e", name, "pass" if res.passed else "FAIL", res.max_relative_error)
        results.append(res)
    if include_pipeline and (not only or "pipeline" in only):
        fn, params = pipeline_case(seed)
        out = T.grad_check(fn, params, tolerance=tolerance, step=1e-4)
        worst = max(out.per_parameter_errors, key=lambda e: e[1], default=("", 0.0))[0]
        res = CaseResult("pipeline", out.max_relative_error, out.passed, worst)
        log.info("%-22s %s  max rel err %.2e", "pipeline", "pass" if res.passed else "FAIL", res.max_relative_error)
        results.append(res)
    return results


def format_results(results: list[CaseResult]) -> str:
    lines = [f"{r.op:<22} {'pass' if r.passed else 'FAIL'}  {r.max_relative_error:.3e}" for r in results]
    return "\n".join(lines) + "\n"


def check_results(results: list[CaseResult]) -> None:
    failed = [r for r in results if not r.passed]
    if failed:
        names = ", ".join(f"{r.op} ({r.worst_parameter})" if r.worst_parameter else r.op for r in failed)
        raise GradCheckFailure(f"gradient check failed for: {names}", ops=[r.op for r in failed])
