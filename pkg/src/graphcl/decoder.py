"""Transformer decoder over fused findings representations, plus greedy and beam decoding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import DecoderLayer, Dropout, Embedding, LayerNorm, Linear, Module
from .tensor import Tensor, no_grad


@dataclass
class DecoderConfig:
    dec_layers: int = 2
    dec_heads: int = 4
    dec_ff: int = 256
    max_target_len: int = 64


@dataclass
class GenerationParams:
    beam_size: int = 4
    max_gen_len: int = 48
    length_penalty: float = 1.0

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_gen_len < 1:
            raise ValueError("max_gen_len must be >= 1")


class Decoder(Module):
    def __init__(self, vocab_size: int, d: int, cfg: DecoderConfig, dropout: float,
                 rng: np.random.Generator):
        self.max_len = cfg.max_target_len
        self.tok = Embedding(vocab_size, d, rng)
        self.pos = Embedding(cfg.max_target_len, d, rng)
        self.norm = LayerNorm(d)
        self.drop = Dropout(dropout)
        self.layers = [DecoderLayer(d, cfg.dec_heads, cfg.dec_ff, dropout, rng) for _ in range(cfg.dec_layers)]
        self.out = Linear(d, vocab_size, rng)

    def __call__(self, s: Tensor, targets: np.ndarray, source_valid: np.ndarray | None = None,
                 target_valid: np.ndarray | None = None) -> Tensor:
        """Logits (B, L, |V|) for BOS-prefixed ``targets`` (B, L)."""
        targets = np.asarray(targets)
        if s.ndim == 2:
            s = T.reshape(s, (1,) + s.shape)
        if targets.ndim == 1:
            targets = targets[None]
        L = targets.shape[1]
        if L > self.max_len:
            raise ValueError(f"target length {L} exceeds max_target_len {self.max_len}")
        y = self.drop(self.norm(self.tok(targets) + self.pos(np.arange(L))))
        for layer in self.layers:
            y = layer(y, s, source_valid, target_valid)
        return self.out(y)


def generation_loss(logits: Tensor, targets, pad_id: int) -> Tensor:
    return T.cross_entropy_nll(logits, targets, pad_id)


def _step_logprobs(decoder: Decoder, s: Tensor, prefixes: np.ndarray, source_valid) -> np.ndarray:
    logits = decoder(s, prefixes, source_valid).data[:, -1, :].astype(np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def greedy_decode(decoder: Decoder, s: Tensor, bos: int, eos: int, max_len: int,
                  source_valid: np.ndarray | None = None) -> list[list[int]]:
    """Arg-max decoding for a batch of sources; ties go to the lower token id."""
    if s.ndim == 2:
        s = T.reshape(s, (1,) + s.shape)
        source_valid = None if source_valid is None else np.asarray(source_valid)[None]
    B = s.shape[0]
    max_len = min(max_len, decoder.max_len - 1)
    prefixes = np.full((B, 1), bos, dtype=np.int64)
    done = np.zeros(B, dtype=bool)
    outputs: list[list[int]] = [[] for _ in range(B)]
    with no_grad():
        for _ in range(max_len):
            logp = _step_logprobs(decoder, s, prefixes, source_valid)
            nxt = logp.argmax(axis=-1)  # first maximum = lowest id
            for b in range(B):
                if done[b]:
                    continue
                if nxt[b] == eos:
                    done[b] = True
                else:
                    outputs[b].append(int(nxt[b]))
            if done.all():
                break
            prefixes = np.concatenate([prefixes, nxt[:, None]], axis=1)
    return outputs


def beam_search(decoder: Decoder, s: Tensor, bos: int, eos: int, gen: GenerationParams,
                source_valid: np.ndarray | None = None) -> list[int]:
    """Beam search for one source (N, d) with score / len**length_penalty ranking.

    Candidates are ordered by raw log-probability, ties broken by parent beam
    order then lower token id, so beam_size=1 reproduces greedy decoding.
    """
    if s.ndim == 2:
        s = T.reshape(s, (1,) + s.shape)
        source_valid = None if source_valid is None else np.asarray(source_valid)[None]
    if s.shape[0] != 1:
        raise ValueError("beam_search decodes one source at a time")
    max_len = min(gen.max_gen_len, decoder.max_len - 1)
    k = gen.beam_size
    beams: list[tuple[list[int], float]] = [([], 0.0)]
    finished: list[tuple[list[int], float]] = []

    def normalised(tokens, score):
        return score / max(len(tokens), 1) ** gen.length_penalty

    with no_grad():
        for _ in range(max_len):
            prefixes = np.array([[bos] + toks for toks, _ in beams], dtype=np.int64)
            n = len(beams)
            mem = s if n == 1 else T.Tensor(np.repeat(s.data, n, axis=0), dtype=s.dtype)
            valid = None if source_valid is None else np.repeat(source_valid, n, axis=0)
            logp = _step_logprobs(decoder, mem, prefixes, valid)
            cands = []
            for bi, (toks, score) in enumerate(beams):
                row = logp[bi]
                top = np.argsort(-row, kind="stable")[:k]
                for tok in top:
                    cands.append((score + float(row[tok]), bi, int(tok)))
            cands.sort(key=lambda c: (-c[0], c[1], c[2]))
            nxt = []
            for score, bi, tok in cands[:k]:
                toks = beams[bi][0]
                if tok == eos:
                    finished.append((toks + [eos], score))
                else:
                    nxt.append((toks + [tok], score))
            beams = nxt
            if not beams or len(finished) >= k:
                break
    pool = finished if finished else beams
    best = max(pool, key=lambda c: (normalised(*c), -len(c[0])))
    return [t for t in best[0] if t != eos]
