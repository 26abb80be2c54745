from .core import Tape, Tensor, backward, grad_enabled, no_grad
from .ops import (
    add,
    concat,
    cosine_similarity,
    cross_entropy_nll,
    dropout,
    elu,
    embedding,
    exp,
    gelu,
    getitem,
    layer_norm,
    leaky_relu,
    log,
    log_softmax,
    masked_fill,
    matmul,
    mean,
    mean_pool,
    mul,
    replace_rows,
    reshape,
    scale,
    softmax,
    sub,
    transpose,
)
from .ops import sum as tsum
from .optim import Adam, AdamState, adam_step, clip_grad_norm, global_grad_norm

__all__ = [
    "Adam", "AdamState", "Tape", "Tensor", "adam_step", "add", "backward", "clip_grad_norm",
    "concat", "cosine_similarity", "cross_entropy_nll", "dropout", "elu", "embedding", "exp",
    "gelu", "getitem", "global_grad_norm", "grad_enabled", "layer_norm", "leaky_relu", "log",
    "log_softmax", "masked_fill", "matmul", "mean", "mean_pool", "mul", "no_grad",
    "replace_rows", "reshape", "scale", "softmax", "sub", "transpose", "tsum",
]
