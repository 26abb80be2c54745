"""Differentiable primitives.

Each function computes its forward value with numpy and attaches a closure
mapping the output gradient to operand gradients. Shapes are checked up
front; broadcasting is limited to two explicit forms (a trailing-suffix
operand such as a bias, or equal rank with singleton axes).
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .core import Tensor

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def _check_broadcast(op: str, a: tuple, b: tuple) -> tuple:
    if a == b:
        return a
    if len(a) != len(b):
        short, long_ = (a, b) if len(a) < len(b) else (b, a)
        if long_[len(long_) - len(short):] != short:
            raise ValueError(f"{op}: shapes {a} and {b} are not suffix-compatible")
        return long_
    out = []
    for x, y in zip(a, b):
        if x != y and x != 1 and y != 1:
            raise ValueError(f"{op}: shapes {a} and {b} differ on a non-singleton axis")
        out.append(max(x, y))
    return tuple(out)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._result(a.data + b.data, (a, b), back, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return Tensor._result(a.data - b.data, (a, b), back, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def back(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Tensor._result(ad * bd, (a, b), back, "mul")


def scale(x: Tensor, c: float) -> Tensor:
    c = x.data.dtype.type(c)

    def back(g):
        return (g * c,)

    return Tensor._result(x.data * c, (x,), back, "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes.

    ``b`` may be a plain 2-D weight shared across the batch axes of ``a``.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul: operands need rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    _check_broadcast("matmul", a.shape[:-2], b.shape[:-2])
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)

    def back(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        if bd.ndim == 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return _unbroadcast(ga, ad.shape), gb

    return Tensor._result(out, (a, b), back, "matmul")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def back(g):
        return (g * out,)

    return Tensor._result(out, (x,), back, "exp")


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise ValueError("log: non-positive input")
    xd = x.data

    def back(g):
        return (g / xd,)

    return Tensor._result(np.log(xd), (x,), back, "log")


# ---------------------------------------------------------------- reductions and shape

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._result(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), back, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    count = x.data.size if axis is None else np.prod([shape[a] for a in np.atleast_1d(axis)])
    inv = x.data.dtype.type(1.0 / count)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g * inv, shape).copy(),)

    return Tensor._result(np.asarray(x.data.mean(axis=axis, keepdims=keepdims)), (x,), back, "mean")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape

    def back(g):
        return (g.reshape(old),)

    return Tensor._result(x.data.reshape(shape), (x,), back, "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def back(g):
        return (np.transpose(g, inv),)

    return Tensor._result(np.transpose(x.data, axes), (x,), back, "transpose")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Join along ``axis`` (the last one by default); all other axes must match."""
    if not tensors:
        raise ValueError("concat: nothing to join")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ValueError(f"concat: shape {t.shape} incompatible with {ref} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=ax))

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), back, "concat")


def getitem(x: Tensor, idx) -> Tensor:
    shape, dtype = x.shape, x.data.dtype

    def back(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor._result(np.array(x.data[idx]), (x,), back, "getitem")


def embedding(weight: Tensor, ids) -> Tensor:
    """Row lookup ``weight[ids]`` for an integer array of any shape."""
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise TypeError("embedding: ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        bad = int(ids[(ids < 0) | (ids >= weight.shape[0])].flat[0])
        raise IndexError(f"embedding: id {bad} outside table of {weight.shape[0]} rows")
    wshape = weight.shape

    def back(g):
        out = np.zeros(wshape, dtype=g.dtype)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, wshape[1]))
        return (out,)

    return Tensor._result(weight.data[ids], (weight,), back, "embedding")


# ---------------------------------------------------------------- activations

def gelu(x: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    xd = x.data
    c = xd.dtype.type(_SQRT_2_OVER_PI)
    k = xd.dtype.type(0.044715)
    x2 = xd * xd  # float32 ``**`` falls back to a slow pow loop
    inner = c * (xd + k * x2 * xd)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def back(g):
        dinner = c * (1.0 + 3.0 * k * x2)
        d = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner
        return (g * d,)

    return Tensor._result(out.astype(xd.dtype, copy=False), (x,), back, "gelu")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    xd = x.data
    pos = xd > 0
    s = xd.dtype.type(slope)

    def back(g):
        return (np.where(pos, g, g * s),)

    return Tensor._result(np.where(pos, xd, xd * s), (x,), back, "leaky_relu")


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    xd = x.data
    pos = xd > 0
    a = xd.dtype.type(alpha)
    neg = a * np.expm1(np.minimum(xd, 0))

    def back(g):
        return (np.where(pos, g, g * (neg + a)),)

    return Tensor._result(np.where(pos, xd, neg), (x,), back, "elu")


def _check_finite(op: str, xd: np.ndarray) -> None:
    finite = np.isfinite(xd)
    if not finite.all():
        bad = tuple(int(i) for i in np.argwhere(~finite)[0])
        raise ValueError(f"{op}: non-finite input at index {bad}")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Probabilities along ``axis`` with max subtraction."""
    xd = x.data
    _check_finite("softmax", xd)
    e = np.exp(xd - xd.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._result(out, (x,), back, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    _check_finite("log_softmax", xd)
    shifted = xd - xd.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def back(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._result(out, (x,), back, "log_softmax")


# ---------------------------------------------------------------- normalisation and masking

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ValueError(f"layer_norm: affine params {gamma.shape}/{beta.shape} do not match width {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + xd.dtype.type(eps))
    xhat = xc * rstd
    gd = gamma.data
    out = xhat * gd + beta.data

    def back(g):
        gx = g * gd
        gxhat_mean = gx.mean(axis=-1, keepdims=True)
        proj = (gx * xhat).mean(axis=-1, keepdims=True)
        dx = rstd * (gx - gxhat_mean - xhat * proj)
        red = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return Tensor._result(out, (x, gamma, beta), back, "layer_norm")


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Set positions where ``mask`` is True to ``value``; they get zero gradient."""
    mask = np.asarray(mask, dtype=bool)
    _check_broadcast("masked_fill", x.shape, mask.shape)
    if np.broadcast_shapes(x.shape, mask.shape) != x.shape:
        raise ValueError(f"masked_fill: mask {mask.shape} would enlarge input {x.shape}")
    fill = x.data.dtype.type(value)

    def back(g):
        return (np.where(mask, 0, g).astype(g.dtype, copy=False),)

    return Tensor._result(np.where(mask, fill, x.data), (x,), back, "masked_fill")


def replace_rows(x: Tensor, rows: np.ndarray, fill: np.ndarray) -> Tensor:
    """Substitute the constant vector ``fill`` at every row flagged in ``rows``.

    ``x`` has shape (..., N, d) and ``rows`` shape (..., N). Substituted rows
    are constants, so no gradient reaches ``x`` through them.
    """
    rows = np.asarray(rows, dtype=bool)
    if rows.shape != x.shape[:-1]:
        raise ValueError(f"replace_rows: row mask {rows.shape} does not match {x.shape[:-1]}")
    fill = np.asarray(fill, dtype=x.data.dtype)
    if fill.shape != (x.shape[-1],):
        raise ValueError(f"replace_rows: fill vector {fill.shape} does not match width {x.shape[-1]}")
    sel = rows[..., None]

    def back(g):
        return (np.where(sel, 0, g).astype(g.dtype, copy=False),)

    return Tensor._result(np.where(sel, fill, x.data), (x,), back, "replace_rows")


def mean_pool(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Average (..., N, d) over the sequence axis, counting only valid positions."""
    xd = x.data
    if mask is None:
        mask = np.ones(xd.shape[:-1], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != xd.shape[:-1]:
        raise ValueError(f"mean_pool: mask {mask.shape} does not match {xd.shape[:-1]}")
    counts = mask.sum(axis=-1, keepdims=True)
    if np.any(counts == 0):
        raise ValueError("mean_pool: empty sequence")
    w = (mask / counts).astype(xd.dtype)[..., None]
    out = (xd * w).sum(axis=-2)

    def back(g):
        return (g[..., None, :] * w,)

    return Tensor._result(out, (x,), back, "mean_pool")


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout: training mode needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / x.data.dtype.type(1.0 - p)

    def back(g):
        return (g * keep,)

    return Tensor._result(x.data * keep, (x,), back, "dropout")


# ---------------------------------------------------------------- losses and similarity

def cross_entropy_nll(logits: Tensor, targets, pad_id: int) -> Tensor:
    """Mean negative log-likelihood of ``targets`` over non-pad positions."""
    targets = np.asarray(targets)
    V = logits.shape[-1]
    if logits.shape[:-1] != targets.shape:
        raise ValueError(f"cross_entropy_nll: logits {logits.shape} vs targets {targets.shape}")
    if targets.size and targets.max() >= V:
        raise IndexError(f"cross_entropy_nll: target id {int(targets.max())} >= vocabulary size {V}")
    flat_logits = logits.data.reshape(-1, V)
    flat_t = targets.reshape(-1)
    valid = flat_t != pad_id
    n = int(valid.sum())
    if n == 0:
        raise ValueError("cross_entropy_nll: every position is padding")
    _check_finite("cross_entropy_nll", flat_logits)
    shifted = flat_logits - flat_logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    rows = np.nonzero(valid)[0]
    loss = -logp[rows, flat_t[rows]].sum() / n
    shape = logits.shape

    def back(g):
        grad = np.exp(logp)
        grad[rows, flat_t[rows]] -= 1.0
        grad[~valid] = 0.0
        return ((grad * (g / n)).reshape(shape).astype(logits.data.dtype, copy=False),)

    return Tensor._result(np.asarray(loss, dtype=logits.data.dtype), (logits,), back, "cross_entropy_nll")


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """a.b / (|a| |b|) along the last axis; zero-norm operands are an error."""
    if a.shape != b.shape:
        raise ValueError(f"cosine_similarity: shapes {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data
    na = np.sqrt((ad * ad).sum(axis=-1))
    nb = np.sqrt((bd * bd).sum(axis=-1))
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("cosine_similarity: zero-norm operand")
    dot = (ad * bd).sum(axis=-1)
    out = dot / (na * nb)

    def back(g):
        ge = g[..., None]
        ga = ge * (bd / (na * nb)[..., None] - out[..., None] * ad / (na * na)[..., None])
        gb = ge * (ad / (na * nb)[..., None] - out[..., None] * bd / (nb * nb)[..., None])
        return ga, gb

    return Tensor._result(np.asarray(out), (a, b), back, "cosine_similarity")
