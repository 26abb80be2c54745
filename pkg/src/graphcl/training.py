"""Joint generation + contrastive training, with deterministic batching and resumable state."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, CheckpointError
from .config import RunConfig, parse_flat
from .corpus import CorpusRecord
from .graph import build_relation_graph
from .model import Batch, Example, Summarizer, collate
from .nn import Dropout
from .tensor import Adam, Tensor, clip_grad_norm
from .tokenizer import Vocab, encode_words

log = logging.getLogger(__name__)


class NonFiniteLoss(RuntimeError):
    pass


def joint_loss(l_ge: Tensor, l_con: Tensor | None, lam: float) -> Tensor:
    """L = l_ge + lam * l_con; a missing contrastive term counts as zero."""
    if not math.isfinite(float(l_ge.data)):
        raise NonFiniteLoss(f"generation loss is {float(l_ge.data)}")
    if l_con is None or lam == 0:
        return l_ge
    if not math.isfinite(float(l_con.data)):
        raise NonFiniteLoss(f"contrastive loss is {float(l_con.data)}")
    return l_ge + T.scale(l_con, lam)


def prepare_examples(records: Sequence[CorpusRecord], vocab: Vocab, run: RunConfig) -> list[Example]:
    """Tokenize, truncate to the model's length limits at word boundaries, and build graphs."""
    max_src = run.model.encoder.max_source_len
    max_tgt = run.model.decoder.max_target_len - 1
    out = []
    truncated = 0
    for rec in records:
        tok = encode_words(rec.words, vocab)
        words, entities, deps = rec.words, rec.entities, rec.dependencies
        if len(tok) > max_src:
            keep = max(k for k in range(len(tok.spans) + 1) if k == 0 or tok.spans[k - 1][1] <= max_src)
            words = words[:keep]
            entities = [e for e in entities if e.end <= keep]
            deps = [d for d in deps if d.dep < keep and d.head < keep]
            tok = encode_words(words, vocab)
            truncated += 1
        graph = build_relation_graph(tok, entities, deps, run.graph)
        target = encode_words(rec.impression_words, vocab).ids[:max_tgt]
        out.append(Example(rec.id, tok.ids, target, graph, len(rec.words), rec.impression))
    if truncated:
        log.warning("truncated %d findings to %d subwords", truncated, max_src)
    return out


def batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Example indices for ``step``: a fresh seeded permutation per epoch, cut into batches."""
    per_epoch = math.ceil(n / batch_size)
    epoch, b = divmod(step, per_epoch)
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return perm[b * batch_size : (b + 1) * batch_size]


@dataclass
class StepRecord:
    step: int
    l_ge: float
    l_con: float
    L: float
    skipped: int
    grad_norm: float

    def to_json(self) -> dict:
        return {"step": self.step, "l_ge": self.l_ge, "l_con": self.l_con, "L": self.L,
                "skipped_contrastive": self.skipped, "grad_norm": self.grad_norm}


class Trainer:
    def __init__(self, examples: Sequence[Example], vocab: Vocab, run: RunConfig,
                 model: Summarizer | None = None):
        if not examples:
            raise ValueError("cannot train on an empty corpus")
        self.examples = list(examples)
        self.vocab = vocab
        self.run = run
        tc = run.train
        self.model = model or Summarizer(len(vocab), run.model, seed=tc.seed)
        self.params = list(self.model.named_parameters())
        self.optimizer = Adam([p for _, p in self.params], lr=tc.lr)
        self.step = 0

    @property
    def cfg(self):
        return self.run.train

    def batch_for(self, step: int) -> Batch:
        idx = batch_indices(len(self.examples), self.cfg.batch_size, self.cfg.seed, step)
        return collate([self.examples[i] for i in idx], self.vocab)

    def _seed_dropout(self, step: int) -> None:
        for m in self.model.modules():
            if isinstance(m, Dropout):
                m.rng = np.random.default_rng([self.cfg.seed, step, 1])

    def train_step(self) -> StepRecord:
        tc = self.cfg
        batch = self.batch_for(self.step)
        self.model.train()
        self._seed_dropout(self.step)
        self.optimizer.zero_grad()
        out = self.model.forward(batch, tc.use_graph, tc.use_contrastive)
        lam = tc.lam if tc.use_contrastive else 0.0
        L = joint_loss(out.l_ge, out.l_con, lam)
        L.backward()
        norm = clip_grad_norm(self.optimizer.params, tc.clip_norm)
        self.optimizer.step()
        self.model.eval()
        rec = StepRecord(self.step, float(out.l_ge.data), float(out.l_con.data) if out.l_con is not None else 0.0,
                         float(L.data), out.n_skipped, norm)
        self.step += 1
        return rec

    def fit(self, steps: int | None = None, on_step: Callable[[StepRecord], None] | None = None) -> list[StepRecord]:
        target = self.cfg.max_steps if steps is None else self.step + steps
        records = []
        while self.step < target:
            rec = self.train_step()
            records.append(rec)
            if on_step:
                on_step(rec)
        return records

    def mean_loss(self, examples: Sequence[Example], batch_size: int = 32) -> float:
        """Teacher-forced generation loss over ``examples`` (no parameter update)."""
        total, count = 0.0, 0
        with T.no_grad():
            for i in range(0, len(examples), batch_size):
                chunk = list(examples[i : i + batch_size])
                out = self.model.forward(collate(chunk, self.vocab), self.cfg.use_graph, False)
                total += float(out.l_ge.data) * len(chunk)
                count += len(chunk)
        return total / count

    # ---------------------------------------------------------------- persistence

    def to_checkpoint(self) -> Checkpoint:
        names = [n for n, _ in self.params]
        st = self.optimizer.states
        return Checkpoint(
            params={n: p.data for n, p in self.params},
            adam_m={n: s.m for n, s in zip(names, st)},
            adam_v={n: s.v for n, s in zip(names, st)},
            adam_t={n: s.t for n, s in zip(names, st)},
            step=self.step,
            config=self.run.dumps(),
            vocab=list(self.vocab.itos),
        )

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, examples: Sequence[Example]) -> "Trainer":
        run = RunConfig.from_flat(parse_flat(ckpt.config))
        vocab = Vocab(ckpt.vocab)
        trainer = cls(examples, vocab, run)
        trainer.load_state(ckpt)
        return trainer

    def load_state(self, ckpt: Checkpoint) -> None:
        load_parameters(self.model, ckpt)
        for (name, _), st in zip(self.params, self.optimizer.states):
            if name in ckpt.adam_m:
                st.m = ckpt.adam_m[name].copy()
                st.v = ckpt.adam_v[name].copy()
                st.t = ckpt.adam_t[name]
        self.step = ckpt.step


def load_parameters(model: Summarizer, ckpt: Checkpoint) -> None:
    named = dict(model.named_parameters())
    missing = sorted(set(named) - set(ckpt.params))
    extra = sorted(set(ckpt.params) - set(named))
    if missing or extra:
        raise CheckpointError(f"parameter mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, p in named.items():
        arr = ckpt.params[name]
        if arr.shape != p.shape:
            raise CheckpointError(f"parameter {name}: shape {arr.shape} != {p.shape}")
        p.data = arr.astype(np.float32).copy()


def model_from_checkpoint(ckpt: Checkpoint) -> tuple[Summarizer, Vocab, RunConfig]:
    run = RunConfig.from_flat(parse_flat(ckpt.config))
    vocab = Vocab(ckpt.vocab)
    model = Summarizer(len(vocab), run.model, seed=run.train.seed)
    load_parameters(model, ckpt)
    return model, vocab, run


def train_loop(records: Sequence[CorpusRecord], vocab: Vocab, run: RunConfig,
               on_step: Callable[[StepRecord], None] | None = None) -> tuple[Checkpoint, list[StepRecord]]:
    """Train from scratch for ``run.train.max_steps`` steps.

    On a non-finite loss the parameters from the last good step are kept and
    returned in the checkpoint; the exception is re-raised with it attached.
    """
    if not records:
        raise ValueError("cannot train on an empty corpus")
    trainer = Trainer(prepare_examples(records, vocab, run), vocab, run)
    history: list[StepRecord] = []

    def record(rec):
        history.append(rec)
        if on_step:
            on_step(rec)

    try:
        trainer.fit(on_step=record)
    except NonFiniteLoss as err:
        err.checkpoint = trainer.to_checkpoint()
        raise
    return trainer.to_checkpoint(), history
