"""ROUGE scoring, corpus evaluation with findings-length buckets, and the ablation harness."""
from __future__ import annotations

import copy
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .config import RunConfig
from .corpus import CorpusRecord
from .decoder import GenerationParams
from .model import Example, Summarizer, collate
from .tokenizer import Vocab, decode_ids

log = logging.getLogger(__name__)

DEFAULT_BUCKET_EDGES = (25, 45, 65, 85, 105, 125)
ABLATION_VARIANTS = (  # (name, use_graph, use_contrastive)
    ("Base", False, False),
    ("Base+CL", False, True),
    ("Base+graph", True, False),
    ("Base+graph+CL", True, True),
)
_WORD = re.compile(r"[a-z0-9]+")


def rouge_tokens(text: str) -> list[str]:
    """Lowercase, split on whitespace and punctuation, no stemming."""
    return _WORD.findall(text.lower())


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, overlap: int, n_cand: int, n_ref: int) -> "RougeScore":
        p = 100.0 * overlap / n_cand if n_cand else 0.0
        r = 100.0 * overlap / n_ref if n_ref else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f)

    def rounded(self) -> dict:
        return {"p": round(self.precision, 2), "r": round(self.recall, 2), "f1": round(self.f1, 2)}


def _ngrams(words: Sequence[str], n: int) -> Counter:
    return Counter(tuple(words[i : i + n]) for i in range(len(words) - n + 1))


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int) -> RougeScore:
    if n < 1:
        raise ValueError("n must be >= 1")
    c, r = _ngrams(candidate, n), _ngrams(reference, n)
    overlap = sum((c & r).values())
    return RougeScore.from_counts(overlap, sum(c.values()), sum(r.values()))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> RougeScore:
    return RougeScore.from_counts(lcs_length(candidate, reference), len(candidate), len(reference))


def score_pair(candidate: str, reference: str) -> dict[str, RougeScore]:
    c, r = rouge_tokens(candidate), rouge_tokens(reference)
    return {"rouge1": rouge_n(c, r, 1), "rouge2": rouge_n(c, r, 2), "rougeL": rouge_l(c, r)}


def bucket_label(n_words: int, edges: Sequence[int] = DEFAULT_BUCKET_EDGES) -> str:
    lo = 0
    for hi in edges:
        if n_words < hi:
            return f"[{lo}, {hi})"
        lo = hi
    return f"[{lo}, inf)"


def bucket_labels(edges: Sequence[int] = DEFAULT_BUCKET_EDGES) -> list[str]:
    bounds = [0, *edges]
    labels = [f"[{a}, {b})" for a, b in zip(bounds, bounds[1:])]
    return labels + [f"[{bounds[-1]}, inf)"]


@dataclass
class CorpusReport:
    rouge1: float
    rouge2: float
    rougeL: float
    count: int
    buckets: dict[str, dict]  # label -> {"count", "rouge1"}; empty buckets are absent
    per_example: list[dict] = field(default_factory=list)

    def to_records(self) -> list[dict]:
        out = [{"kind": "aggregate", "count": self.count, "rouge1": round(self.rouge1, 2),
                "rouge2": round(self.rouge2, 2), "rougeL": round(self.rougeL, 2)}]
        for label, b in self.buckets.items():
            out.append({"kind": "length_bucket", "bucket": label, "count": b["count"],
                        "rouge1": round(b["rouge1"], 2)})
        return out

    def table(self) -> str:
        lines = [f"{'metric':<10}{'F1':>8}", f"{'R-1':<10}{self.rouge1:>8.2f}",
                 f"{'R-2':<10}{self.rouge2:>8.2f}", f"{'R-L':<10}{self.rougeL:>8.2f}", "",
                 f"{'findings words':<16}{'count':>7}{'R-1':>8}"]
        for label, b in self.buckets.items():
            lines.append(f"{label:<16}{b['count']:>7}{b['rouge1']:>8.2f}")
        return "\n".join(lines) + "\n"


def summarise_scores(rows: Sequence[dict], edges: Sequence[int] = DEFAULT_BUCKET_EDGES) -> CorpusReport:
    """Aggregate per-example rows carrying ``rouge1/2/L`` F1 and ``n_words``."""
    if not rows:
        raise ValueError("no examples to summarise")
    means = {k: float(np.mean([r[k] for r in rows])) for k in ("rouge1", "rouge2", "rougeL")}
    groups: dict[str, list[float]] = {}
    for r in rows:
        groups.setdefault(bucket_label(r["n_words"], edges), []).append(r["rouge1"])
    buckets = {label: {"count": len(groups[label]), "rouge1": float(np.mean(groups[label]))}
               for label in bucket_labels(edges) if label in groups}
    return CorpusReport(means["rouge1"], means["rouge2"], means["rougeL"], len(rows), buckets, list(rows))


def predict(model: Summarizer, examples: Sequence[Example], vocab: Vocab, gen: GenerationParams,
            use_graph: bool = True, batch_size: int = 64) -> list[str]:
    if model.vocab_size != len(vocab):
        raise ValueError(f"vocabulary mismatch: model has {model.vocab_size} ids, vocabulary has {len(vocab)}")
    out = []
    for i in range(0, len(examples), batch_size):
        chunk = list(examples[i : i + batch_size])
        for ids in model.generate(collate(chunk, vocab), gen, use_graph):
            out.append(decode_ids(ids, vocab))
    return out


def evaluate_corpus(model: Summarizer, examples: Sequence[Example], vocab: Vocab, gen: GenerationParams,
                    use_graph: bool = True, edges: Sequence[int] = DEFAULT_BUCKET_EDGES,
                    predictions: Sequence[str] | None = None) -> CorpusReport:
    """Generate an impression for every example and score it against the reference."""
    if predictions is None:
        predictions = predict(model, examples, vocab, gen, use_graph)
    rows = []
    for ex, pred in zip(examples, predictions):
        s = score_pair(pred, ex.reference)
        rows.append({"id": ex.id, "n_words": ex.n_words, "prediction": pred, "reference": ex.reference,
                     **{k: v.f1 for k, v in s.items()}})
    return summarise_scores(rows, edges)


# ---------------------------------------------------------------- ablation

@dataclass
class AblationRow:
    name: str
    use_graph: bool
    use_contrastive: bool
    per_seed: dict[int, dict] = field(default_factory=dict)  # seed -> metrics
    failures: dict[int, str] = field(default_factory=dict)

    def mean(self, metric: str) -> float | None:
        vals = [m[metric] for m in self.per_seed.values()]
        return float(np.mean(vals)) if vals else None


@dataclass
class AblationReport:
    rows: list[AblationRow]
    seeds: list[int]

    def to_records(self) -> list[dict]:
        out = []
        for r in self.rows:
            rec = {"kind": "ablation", "model": r.name, "use_graph": r.use_graph,
                   "use_contrastive": r.use_contrastive, "failed": bool(r.failures)}
            for m in ("rouge1", "rouge2", "rougeL"):
                v = r.mean(m)
                rec[m] = None if v is None else round(v, 2)
            rec["per_seed"] = {str(s): {k: round(v, 2) for k, v in vals.items()} for s, vals in r.per_seed.items()}
            if r.failures:
                rec["failures"] = {str(s): msg for s, msg in r.failures.items()}
            out.append(rec)
        return out

    def table(self) -> str:
        head = f"{'Model':<16}{'R-1':>8}{'R-2':>8}{'R-L':>8}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            cells = []
            for m in ("rouge1", "rouge2", "rougeL"):
                v = r.mean(m)
                cells.append(f"{'FAILED' if v is None else f'{v:.2f}':>8}")
            mark = "  (partial: " + ", ".join(f"seed {s} failed" for s in r.failures) + ")" if r.failures else ""
            lines.append(f"{r.name:<16}{''.join(cells)}{mark}")
        if len(self.seeds) > 1:
            lines += ["", f"per-seed R-1 (seeds {', '.join(map(str, self.seeds))})"]
            for r in self.rows:
                vals = " ".join(f"{r.per_seed[s]['rouge1']:7.2f}" if s in r.per_seed else "  FAIL " for s in self.seeds)
                lines.append(f"{r.name:<16}{vals}")
        return "\n".join(lines) + "\n"


def train_and_score(train_records: Sequence[CorpusRecord], eval_records: Sequence[CorpusRecord],
                    vocab: Vocab, run: RunConfig) -> dict:
    from .training import Trainer, prepare_examples

    trainer = Trainer(prepare_examples(train_records, vocab, run), vocab, run)
    trainer.fit()
    examples = prepare_examples(eval_records, vocab, run)
    rep = evaluate_corpus(trainer.model, examples, vocab, run.generation, run.train.use_graph)
    return {"rouge1": rep.rouge1, "rouge2": rep.rouge2, "rougeL": rep.rougeL}


def run_ablation(train_records: Sequence[CorpusRecord], eval_records: Sequence[CorpusRecord], vocab: Vocab,
                 base: RunConfig, seeds: Sequence[int] = (0,),
                 runner: Callable[..., dict] = train_and_score) -> AblationReport:
    """Train the four variants per seed with identical budgets, differing only in the two switches."""
    rows = []
    for name, use_graph, use_con in ABLATION_VARIANTS:
        row = AblationRow(name, use_graph, use_con)
        for seed in seeds:
            run = copy.deepcopy(base)
            run.train.use_graph = use_graph
            run.train.use_contrastive = use_con
            run.train.seed = seed
            try:
                row.per_seed[seed] = runner(train_records, eval_records, vocab, run)
                log.info("%s seed %d: %s", name, seed, json.dumps(row.per_seed[seed]))
            except Exception as err:  # a failed variant is reported, not fatal
                log.error("%s seed %d failed: %s", name, seed, err)
                row.failures[seed] = f"{type(err).__name__}: {err}"
        rows.append(row)
    return AblationReport(rows, list(seeds))
