"""Graph-enhanced encoder: text Transformer, multi-head GAT, and fusion MLP."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Dropout, Embedding, LayerNorm, Linear, Module, NEG_INF, TransformerStack
from .tensor import Tensor


@dataclass
class EncoderConfig:
    d_model: int = 64
    text_layers: int = 2
    text_heads: int = 4
    text_ff: int = 256
    gat_layers: int = 2
    gat_heads: int = 4
    max_source_len: int = 128
    dropout: float = 0.0
    gat_slope: float = 0.2

    def __post_init__(self):
        if self.d_model % self.text_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by text_heads {self.text_heads}")
        if self.d_model % self.gat_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by gat_heads {self.gat_heads}")
        if self.gat_layers < 1:
            raise ValueError("gat_layers must be >= 1")


@dataclass
class EncodedFindings:
    h: Tensor
    z: Tensor
    s: Tensor


class TextEncoder(Module):
    """Token + learned position embeddings followed by a self-attention stack."""

    def __init__(self, vocab_size: int, cfg: EncoderConfig, rng: np.random.Generator):
        self.max_len = cfg.max_source_len
        self.tok = Embedding(vocab_size, cfg.d_model, rng)
        self.pos = Embedding(cfg.max_source_len, cfg.d_model, rng)
        self.norm = LayerNorm(cfg.d_model)
        self.drop = Dropout(cfg.dropout)
        self.stack = TransformerStack(cfg.text_layers, cfg.d_model, cfg.text_heads, cfg.text_ff,
                                      cfg.dropout, rng)

    def __call__(self, ids: np.ndarray, valid: np.ndarray | None = None) -> Tensor:
        ids = np.asarray(ids)
        if ids.ndim == 1:
            ids = ids[None]
        N = ids.shape[1]
        if N > self.max_len:
            raise ValueError(f"source length {N} exceeds max_source_len {self.max_len}")
        x = self.tok(ids) + self.pos(np.arange(N))
        return self.stack(self.drop(self.norm(x)), valid)


class GATLayer(Module):
    """One multi-head graph attention layer.

    Node i attends over its in-neighbours plus itself with
    e_ij = LeakyReLU(a_dst . W h_i + a_src . W h_j), which equals a^T [W h_i || W h_j]
    with a split into its two halves.
    """

    def __init__(self, d_in: int, d_head: int, heads: int, concat: bool, slope: float,
                 rng: np.random.Generator):
        self.heads = heads
        self.d_head = d_head
        self.concat = concat
        self.slope = slope
        self.W = Linear(d_in, heads * d_head, rng, bias=False)
        limit = np.sqrt(6.0 / (d_head + 1))
        self.a_dst = T.Tensor(rng.uniform(-limit, limit, size=(heads, d_head, 1)), requires_grad=True)
        self.a_src = T.Tensor(rng.uniform(-limit, limit, size=(heads, d_head, 1)), requires_grad=True)
        self.last_attention: np.ndarray | None = None

    def __call__(self, h: Tensor, adj: np.ndarray) -> Tensor:
        """``adj`` is (B, N, N) boolean with adj[b, i, j] meaning j -> i (self-loops included)."""
        B, N, _ = h.shape
        wh = T.transpose(T.reshape(self.W(h), (B, N, self.heads, self.d_head)), (0, 2, 1, 3))
        f_dst = wh @ self.a_dst                                   # (B, H, N, 1)
        f_src = T.transpose(wh @ self.a_src, (0, 1, 3, 2))        # (B, H, 1, N)
        e = T.leaky_relu(f_dst + f_src, self.slope)               # (B, H, N, N)
        e = T.masked_fill(e, ~adj[:, None, :, :], NEG_INF)
        alpha = T.softmax(e, axis=-1)
        self.last_attention = alpha.data
        out = alpha @ wh                                          # (B, H, N, dh)
        if self.concat:
            out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (B, N, self.heads * self.d_head))
        else:
            out = T.mean(out, axis=1)
        return T.elu(out)


class GraphEncoder(Module):
    """Stack of GAT layers; heads concatenated in hidden layers, averaged at the output."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        d, H = cfg.d_model, cfg.gat_heads
        self.layers = []
        for i in range(cfg.gat_layers):
            last = i == cfg.gat_layers - 1
            self.layers.append(GATLayer(d, d if last else d // H, H, concat=not last,
                                        slope=cfg.gat_slope, rng=rng))

    def __call__(self, h: Tensor, adj: np.ndarray) -> Tensor:
        adj = np.asarray(adj, dtype=bool)
        if adj.ndim == 2:
            adj = adj[None]
        if h.ndim == 2:
            h = T.reshape(h, (1,) + h.shape)
        B, N, _ = h.shape
        if adj.shape != (B, N, N):
            raise ValueError(f"graph encoder: adjacency {adj.shape} does not match features {h.shape}")
        adj = adj | np.eye(N, dtype=bool)[None]
        for layer in self.layers:
            h = layer(h, adj)
        return h


class Fusion(Module):
    """s_i = MLP(h_i || z_i): 2d -> d -> d with GELU in between."""

    def __init__(self, d: int, rng: np.random.Generator):
        self.fc1 = Linear(2 * d, d, rng)
        self.fc2 = Linear(d, d, rng)

    def __call__(self, h: Tensor, z: Tensor) -> Tensor:
        if h.shape != z.shape:
            raise ValueError(f"fusion: h {h.shape} and z {z.shape} differ")
        return self.fc2(T.gelu(self.fc1(T.concat([h, z], axis=-1))))
