"""Key-token masking, the contrastive encoder, and the two-view contrastive loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .graph import RelationGraph, key_token_indices
from .nn import Module, TransformerStack
from .tensor import Tensor

MASK_VALUE = 1e-6
POOLINGS = ("mean", "first")


def mask_vector(d: int, dtype=np.float32) -> np.ndarray:
    """The constant replacement row; a fresh array each call, never a parameter."""
    return np.full(d, MASK_VALUE, dtype=dtype)


@dataclass
class ContrastiveConfig:
    con_layers: int = 2
    con_heads: int = 4
    con_ff: int = 256
    tau: float = 1.0
    pooling: str = "mean"

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")


@dataclass
class ContrastivePair:
    positive: Tensor
    negative: Tensor
    key: np.ndarray  # boolean (..., N)


def generate_examples(s: Tensor, graph: RelationGraph | np.ndarray) -> ContrastivePair:
    """Positive view masks non-key rows, negative view masks key rows.

    ``graph`` is either a RelationGraph (for unbatched ``s`` of shape (N, d))
    or a precomputed boolean key mask of shape s.shape[:-1].
    """
    if isinstance(graph, RelationGraph):
        if s.shape[-2] != graph.n:
            raise ValueError(f"representation has {s.shape[-2]} rows but graph has {graph.n} nodes")
        key = np.zeros(s.shape[:-1], dtype=bool)
        key[..., key_token_indices(graph)] = True
    else:
        key = np.asarray(graph, dtype=bool)
    m = mask_vector(s.shape[-1], s.dtype)
    return ContrastivePair(T.replace_rows(s, ~key, m), T.replace_rows(s, key, m), key)


class ContrastiveEncoder(Module):
    """Randomly initialised self-attention stack pooled to one vector per sequence."""

    def __init__(self, d: int, cfg: ContrastiveConfig, dropout: float, rng: np.random.Generator):
        self.pooling = cfg.pooling
        self.stack = TransformerStack(cfg.con_layers, d, cfg.con_heads, cfg.con_ff, dropout, rng)

    def __call__(self, x: Tensor, valid: np.ndarray | None = None) -> Tensor:
        squeeze = x.ndim == 2
        if squeeze:
            x = T.reshape(x, (1,) + x.shape)
            valid = None if valid is None else np.asarray(valid)[None]
        if x.shape[1] == 0:
            raise ValueError("contrastive encoder needs at least one position")
        y = self.stack(x, valid)
        if self.pooling == "first":
            pooled = T.getitem(y, (slice(None), 0))
        else:
            pooled = T.mean_pool(y, valid if valid is not None else np.ones(y.shape[:2], dtype=bool))
        return T.reshape(pooled, (pooled.shape[-1],)) if squeeze else pooled


def contrastive_loss(b: Tensor, b_pos: Tensor, b_neg: Tensor, tau: float = 1.0) -> Tensor:
    """-log(e^{s+/tau} / (e^{s+/tau} + e^{s-/tau})), averaged over a leading batch axis if present.

    One positive and one negative per sample; other batch items are never
    used as negatives.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    s_pos = T.cosine_similarity(b, b_pos)
    s_neg = T.cosine_similarity(b, b_neg)
    return contrastive_loss_from_similarities(s_pos, s_neg, tau)


def contrastive_loss_from_similarities(s_pos: Tensor, s_neg: Tensor, tau: float = 1.0) -> Tensor:
    batch = s_pos.shape
    logits = T.concat([T.reshape(s_pos, batch + (1,)), T.reshape(s_neg, batch + (1,))], axis=-1)
    logp = T.log_softmax(T.scale(logits, 1.0 / tau), axis=-1)
    return T.scale(T.mean(T.getitem(logp, (..., 0))), -1.0)
