"""Transformer building blocks on top of the tensor engine."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor

NEG_INF = -1e9


class Module:
    training = False

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, list):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def astype(self, dtype) -> "Module":
        """Recast every parameter in place (float64 is used by gradient checks)."""
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self


def _param(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        limit = math.sqrt(6.0 / (d_in + d_out))
        self.weight = _param(rng.uniform(-limit, limit, size=(d_in, d_out)))
        self.bias = _param(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise ValueError(f"Linear: input width {x.shape[-1]} != {self.weight.shape[0]}")
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = _param(np.ones(d))
        self.beta = _param(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator, std: float = 0.02):
        self.weight = _param(rng.normal(0.0, std, size=(n, d)))

    def __call__(self, ids) -> Tensor:
        return T.embedding(self.weight, ids)


class Dropout(Module):
    def __init__(self, p: float):
        self.p = p
        self.rng: np.random.Generator | None = None

    def __call__(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.p, self.rng, self.training)


class MultiHeadAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads:
            raise ValueError(f"width {d} is not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)

    def _split(self, x: Tensor) -> Tensor:
        B, N, d = x.shape
        return T.transpose(T.reshape(x, (B, N, self.heads, d // self.heads)), (0, 2, 1, 3))

    def __call__(self, xq: Tensor, xkv: Tensor, key_valid: np.ndarray | None = None,
                 causal: bool = False) -> Tensor:
        """Attention of ``xq`` (B, Nq, d) over ``xkv`` (B, Nk, d).

        ``key_valid`` (B, Nk) marks real (non-pad) keys; ``causal`` forbids
        attending to later positions.
        """
        B, Nq, d = xq.shape
        Nk = xkv.shape[1]
        q, k, v = self._split(self.q(xq)), self._split(self.k(xkv)), self._split(self.v(xkv))
        scores = T.scale(q @ T.transpose(k, (0, 1, 3, 2)), 1.0 / math.sqrt(d // self.heads))
        blocked = np.zeros((B, 1, Nq, Nk), dtype=bool)
        if key_valid is not None:
            blocked |= ~np.asarray(key_valid, dtype=bool)[:, None, None, :]
        if causal:
            blocked |= np.triu(np.ones((Nq, Nk), dtype=bool), k=1)[None, None]
        if blocked.any():
            scores = T.masked_fill(scores, blocked, NEG_INF)
        att = T.softmax(scores, axis=-1)
        ctx = T.reshape(T.transpose(att @ v, (0, 2, 1, 3)), (B, Nq, d))
        return self.o(ctx)


class FeedForward(Module):
    def __init__(self, d: int, d_ff: int, rng: np.random.Generator):
        self.fc1 = Linear(d, d_ff, rng)
        self.fc2 = Linear(d_ff, d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class EncoderLayer(Module):
    """Post-norm self-attention block."""

    def __init__(self, d: int, heads: int, d_ff: int, dropout: float, rng: np.random.Generator):
        self.attn = MultiHeadAttention(d, heads, rng)
        self.ff = FeedForward(d, d_ff, rng)
        self.norm1 = LayerNorm(d)
        self.norm2 = LayerNorm(d)
        self.drop = Dropout(dropout)

    def __call__(self, x: Tensor, valid: np.ndarray | None) -> Tensor:
        x = self.norm1(x + self.drop(self.attn(x, x, valid)))
        return self.norm2(x + self.drop(self.ff(x)))


class DecoderLayer(Module):
    def __init__(self, d: int, heads: int, d_ff: int, dropout: float, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(d, heads, rng)
        self.cross_attn = MultiHeadAttention(d, heads, rng)
        self.ff = FeedForward(d, d_ff, rng)
        self.norm1 = LayerNorm(d)
        self.norm2 = LayerNorm(d)
        self.norm3 = LayerNorm(d)
        self.drop = Dropout(dropout)

    def __call__(self, y: Tensor, memory: Tensor, memory_valid: np.ndarray | None,
                 target_valid: np.ndarray | None) -> Tensor:
        y = self.norm1(y + self.drop(self.self_attn(y, y, target_valid, causal=True)))
        y = self.norm2(y + self.drop(self.cross_attn(y, memory, memory_valid)))
        return self.norm3(y + self.drop(self.ff(y)))


class TransformerStack(Module):
    def __init__(self, layers: int, d: int, heads: int, d_ff: int, dropout: float,
                 rng: np.random.Generator):
        self.layers = [EncoderLayer(d, heads, d_ff, dropout, rng) for _ in range(layers)]

    def __call__(self, x: Tensor, valid: np.ndarray | None = None) -> Tensor:
        for layer in self.layers:
            x = layer(x, valid)
        return x
