"""The complete summarizer: encoder, graph encoder, fusion, contrastive branch, decoder."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .contrastive import ContrastiveConfig, ContrastiveEncoder, contrastive_loss_from_similarities, generate_examples
from .decoder import Decoder, DecoderConfig, GenerationParams, beam_search, generation_loss, greedy_decode
from .encoder import EncodedFindings, EncoderConfig, Fusion, GraphEncoder, TextEncoder
from .graph import RelationGraph
from .nn import Module
from .tensor import Tensor
from .tokenizer import Vocab


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)


@dataclass
class Example:
    """One findings/impression pair, tokenized and with its relation graph."""

    id: str
    source: list[int]
    target: list[int]  # impression ids without BOS/EOS
    graph: RelationGraph
    n_words: int
    reference: str


@dataclass
class Batch:
    ids: list[str]
    source: np.ndarray        # (B, N) padded
    source_valid: np.ndarray  # (B, N)
    adjacency: np.ndarray     # (B, N, N), adj[b, i, j] = edge j -> i
    key: np.ndarray           # (B, N) key-token mask
    target_in: np.ndarray     # (B, L) BOS + y
    target_out: np.ndarray    # (B, L) y + EOS
    target_valid: np.ndarray  # (B, L)


def collate(examples: list[Example], vocab: Vocab) -> Batch:
    B = len(examples)
    N = max(len(e.source) for e in examples)
    L = max(len(e.target) for e in examples) + 1
    src = np.full((B, N), vocab.pad_id, dtype=np.int64)
    valid = np.zeros((B, N), dtype=bool)
    adj = np.zeros((B, N, N), dtype=bool)
    key = np.zeros((B, N), dtype=bool)
    t_in = np.full((B, L), vocab.pad_id, dtype=np.int64)
    t_out = np.full((B, L), vocab.pad_id, dtype=np.int64)
    for b, e in enumerate(examples):
        n = len(e.source)
        src[b, :n] = e.source
        valid[b, :n] = True
        adj[b, :n, :n] = e.graph.adjacency()
        key[b, :n] = e.graph.key_mask()
        t = e.target
        t_in[b, : len(t) + 1] = [vocab.bos_id] + t
        t_out[b, : len(t) + 1] = t + [vocab.eos_id]
    return Batch([e.id for e in examples], src, valid, adj, key, t_in, t_out, t_out != vocab.pad_id)


@dataclass
class ForwardOutput:
    l_ge: Tensor
    l_con: Tensor | None
    n_contrastive: int
    n_skipped: int
    sim_pos: np.ndarray | None = None
    sim_neg: np.ndarray | None = None


class Summarizer(Module):
    def __init__(self, vocab_size: int, cfg: ModelConfig, seed: int = 0):
        enc = cfg.encoder
        self.cfg = cfg
        self.vocab_size = vocab_size
        rng = np.random.default_rng(seed)
        self.text_encoder = TextEncoder(vocab_size, enc, rng)
        self.graph_encoder = GraphEncoder(enc, rng)
        self.fusion = Fusion(enc.d_model, rng)
        self.contrastive_encoder = ContrastiveEncoder(enc.d_model, cfg.contrastive, enc.dropout, rng)
        self.decoder = Decoder(vocab_size, enc.d_model, cfg.decoder, enc.dropout, rng)

    def encode(self, source: np.ndarray, source_valid: np.ndarray | None, adjacency: np.ndarray | None,
               use_graph: bool = True) -> EncodedFindings:
        h = self.text_encoder(source, source_valid)
        if use_graph:
            if adjacency is None:
                raise ValueError("use_graph needs an adjacency matrix")
            z = self.graph_encoder(h, adjacency)
        else:
            z = Tensor(np.zeros(h.shape), dtype=h.dtype)
        return EncodedFindings(h, z, self.fusion(h, z))

    def contrastive_similarities(self, s: Tensor, key: np.ndarray, valid: np.ndarray):
        """Cosine similarities (s+, s-) for rows whose key set is a proper non-empty subset."""
        n_key = (key & valid).sum(axis=1)
        usable = (n_key > 0) & (n_key < valid.sum(axis=1))
        idx = np.nonzero(usable)[0]
        if idx.size == 0:
            return None, None, 0, len(key)
        s_u = T.getitem(s, idx) if idx.size < s.shape[0] else s
        key_u, valid_u = key[idx], valid[idx]
        pair = generate_examples(s_u, key_u)
        # one pass over the three views stacked on the batch axis
        n = idx.size
        pooled = self.contrastive_encoder(T.concat([s_u, pair.positive, pair.negative], axis=0),
                                          np.concatenate([valid_u] * 3, axis=0))
        b, b_pos, b_neg = (T.getitem(pooled, slice(i * n, (i + 1) * n)) for i in range(3))
        return T.cosine_similarity(b, b_pos), T.cosine_similarity(b, b_neg), int(n), int(len(key) - n)

    def forward(self, batch: Batch, use_graph: bool = True, use_contrastive: bool = True) -> ForwardOutput:
        enc = self.encode(batch.source, batch.source_valid, batch.adjacency, use_graph)
        logits = self.decoder(enc.s, batch.target_in, batch.source_valid, batch.target_valid)
        l_ge = generation_loss(logits, batch.target_out, pad_id=Vocab.pad_id)
        if not use_contrastive:
            return ForwardOutput(l_ge, None, 0, 0)
        sp, sn, used, skipped = self.contrastive_similarities(enc.s, batch.key, batch.source_valid)
        if sp is None:
            return ForwardOutput(l_ge, None, 0, skipped)
        l_con = contrastive_loss_from_similarities(sp, sn, self.cfg.contrastive.tau)
        return ForwardOutput(l_ge, l_con, used, skipped, sp.data.copy(), sn.data.copy())

    def generate(self, batch: Batch, gen: GenerationParams, use_graph: bool = True,
                 bos: int = Vocab.bos_id, eos: int = Vocab.eos_id) -> list[list[int]]:
        with T.no_grad():
            enc = self.encode(batch.source, batch.source_valid, batch.adjacency, use_graph)
            if gen.beam_size == 1:
                return greedy_decode(self.decoder, enc.s, bos, eos, gen.max_gen_len, batch.source_valid)
            out = []
            for b in range(enc.s.shape[0]):
                s_b = Tensor(enc.s.data[b : b + 1], dtype=enc.s.dtype)
                out.append(beam_search(self.decoder, s_b, bos, eos, gen, batch.source_valid[b : b + 1]))
            return out
