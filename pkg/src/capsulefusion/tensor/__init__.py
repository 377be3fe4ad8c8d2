from .core import DEFAULT_DTYPE, Record, Tape, Tensor, active_tape, as_tensor, backward, record
from .conv import conv2d, global_avg_pool, pool2d, upsample2d
from .gradcheck import GradCheckResult, grad_check, relative_error
from .losses import mean_squared_error, softmax_cross_entropy
from .ops import (
    ELEMENTWISE_KINDS,
    argmax,
    batched_matmul,
    broadcast_to,
    concat,
    dropout,
    elementwise,
    matmul,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    sigmoid,
    silu,
    slice_axis,
    softmax,
    square,
    transpose,
)

__all__ = [
    "DEFAULT_DTYPE", "ELEMENTWISE_KINDS", "GradCheckResult", "Record", "Tape", "Tensor",
    "active_tape", "argmax", "as_tensor", "backward", "batched_matmul", "broadcast_to",
    "concat", "conv2d", "dropout", "elementwise", "global_avg_pool", "grad_check", "matmul",
    "mean_squared_error", "pool2d", "record", "reduce_mean", "reduce_sum", "relative_error",
    "relu", "reshape", "sigmoid", "silu", "slice_axis", "softmax", "softmax_cross_entropy",
    "square", "transpose", "upsample2d",
]
