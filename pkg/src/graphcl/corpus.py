"""Corpus records, JSONL ingestion, the synthetic report generator, and a lexicon annotator."""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .graph import ENTITY_TYPES, AnnotationError, DependencyEdge, EntityAnnotation
from .tokenizer import basic_tokenize

MIN_FINDINGS_WORDS = 10
MIN_IMPRESSION_WORDS = 2


class CorpusError(ValueError):
    """A record is structurally invalid; carries the record id and offending field."""

    def __init__(self, record_id: str, field_name: str, message: str):
        super().__init__(f"record {record_id!r}: field {field_name!r}: {message}")
        self.record_id = record_id
        self.field = field_name


@dataclass
class CorpusRecord:
    id: str
    findings: str
    impression: str
    words: list[str]
    entities: list[EntityAnnotation] = field(default_factory=list)
    dependencies: list[DependencyEdge] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def impression_words(self) -> list[str]:
        return basic_tokenize(self.impression)

    def to_json(self) -> dict:
        out = {
            "id": self.id,
            "findings": self.findings,
            "impression": self.impression,
            "words": self.words,
            "entities": [e.to_json() for e in self.entities],
            "dependencies": [d.to_json() for d in self.dependencies],
        }
        if self.meta:
            out["meta"] = self.meta
        return out

    @classmethod
    def from_json(cls, obj: dict, line_no: int | None = None) -> "CorpusRecord":
        rid = str(obj.get("id", f"line{line_no}" if line_no is not None else "?"))
        for name in ("findings", "impression"):
            if not isinstance(obj.get(name), str):
                raise CorpusError(rid, name, "missing or not a string")
        words = obj.get("words")
        if words is None:
            words = basic_tokenize(obj["findings"])
        if not isinstance(words, list) or not all(isinstance(w, str) for w in words):
            raise CorpusError(rid, "words", "must be a list of strings")
        try:
            entities = [EntityAnnotation(int(e["start"]), int(e["end"]), str(e["type"]))
                        for e in obj.get("entities", [])]
        except (KeyError, TypeError, ValueError) as err:
            raise CorpusError(rid, "entities", f"malformed entry ({err})") from None
        try:
            deps = [DependencyEdge(int(d["head"]), int(d["dep"]), str(d.get("rel", "")))
                    for d in obj.get("dependencies", [])]
        except (KeyError, TypeError, ValueError) as err:
            raise CorpusError(rid, "dependencies", f"malformed entry ({err})") from None
        return cls(rid, obj["findings"], obj["impression"], list(words), entities, deps, dict(obj.get("meta", {})))


def check_structure(rec: CorpusRecord) -> None:
    """Raise CorpusError for broken annotations or empty text."""
    if not rec.words:
        raise CorpusError(rec.id, "words", "empty")
    if not rec.impression_words:
        raise CorpusError(rec.id, "impression", "empty")
    n = len(rec.words)
    for i, e in enumerate(rec.entities):
        try:
            e.validate(n)
        except AnnotationError as err:
            raise CorpusError(rec.id, f"entities[{i}]", str(err)) from None
    for i, d in enumerate(rec.dependencies):
        try:
            d.validate(n)
        except AnnotationError as err:
            raise CorpusError(rec.id, f"dependencies[{i}]", str(err)) from None


def count_words(tokens: Sequence[str]) -> int:
    """Tokens holding at least one letter or digit; punctuation does not count towards length limits."""
    return sum(1 for t in tokens if any(c.isalnum() for c in t))


def length_filter_reason(rec: CorpusRecord) -> str | None:
    n_find, n_imp = count_words(rec.words), count_words(rec.impression_words)
    if n_find < MIN_FINDINGS_WORDS:
        return f"findings has {n_find} < {MIN_FINDINGS_WORDS} words"
    if n_imp < MIN_IMPRESSION_WORDS:
        return f"impression has {n_imp} < {MIN_IMPRESSION_WORDS} words"
    return None


@dataclass
class IngestReport:
    accepted: list[CorpusRecord]
    malformed: list[CorpusError]
    filtered: list[tuple[str, str]]  # (id, reason)

    @property
    def rejected(self) -> int:
        return len(self.malformed) + len(self.filtered)

    def summary(self) -> str:
        return (f"accepted={len(self.accepted)} rejected={self.rejected} "
                f"(malformed={len(self.malformed)}, filtered={len(self.filtered)})")


def ingest(lines: Iterable[str]) -> IngestReport:
    accepted, malformed, filtered = [], [], []
    for no, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as err:
            malformed.append(CorpusError(f"line{no}", "json", str(err)))
            continue
        if not isinstance(obj, dict):
            malformed.append(CorpusError(f"line{no}", "json", "record is not an object"))
            continue
        try:
            rec = CorpusRecord.from_json(obj, no)
            check_structure(rec)
        except CorpusError as err:
            malformed.append(err)
            continue
        reason = length_filter_reason(rec)
        if reason:
            filtered.append((rec.id, reason))
        else:
            accepted.append(rec)
    return IngestReport(accepted, malformed, filtered)


def load_corpus(path: str | Path) -> IngestReport:
    with open(path, encoding="utf-8") as fh:
        return ingest(fh)


def write_corpus(records: Iterable[CorpusRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


# ---------------------------------------------------------------- heuristic annotation

_ADJECTIVES = {
    "small", "large", "mild", "moderate", "severe", "minimal", "trace", "tiny", "new", "stable",
    "left", "right", "bilateral", "upper", "lower", "middle", "diffuse", "focal", "patchy", "subtle",
}
_ADJ_SUFFIXES = ("al", "ar", "ic", "ous", "ive", "ed")
_HEAD_TYPES = ("anatomy", "observation")


def load_lexicon(path: str | Path) -> dict[str, str]:
    """Lexicon as JSON ``{term: type}`` or TSV ``term<TAB>type`` lines."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        lex = json.loads(text)
    else:
        lex = {}
        for line in text.splitlines():
            if line.strip() and not line.startswith("#"):
                term, _, kind = line.rpartition("\t")
                lex[term.strip()] = kind.strip()
    for term, kind in lex.items():
        if kind not in ENTITY_TYPES:
            raise ValueError(f"lexicon term {term!r} has unknown type {kind!r}")
    return {term.lower(): kind for term, kind in lex.items()}


def _adjective_like(word: str, lexicon: dict[str, str]) -> bool:
    if lexicon.get(word, "").endswith("_modifier"):
        return True
    return word in _ADJECTIVES or (len(word) > 4 and word.endswith(_ADJ_SUFFIXES))


def heuristic_annotate(words: Sequence[str], lexicon: dict[str, str]):
    """Lexicon spans become entities; adjective runs before a head entity depend on its last word.

    Overlapping candidates resolve longest first, then leftmost.
    """
    low = [w.lower() for w in words]
    terms = {tuple(t.split()): kind for t, kind in lexicon.items()}
    max_len = max((len(t) for t in terms), default=0)
    cands = []
    for i in range(len(low)):
        for k in range(1, max_len + 1):
            kind = terms.get(tuple(low[i : i + k]))
            if kind and i + k <= len(low):
                cands.append((i, i + k, kind))
    cands.sort(key=lambda c: (-(c[1] - c[0]), c[0]))
    taken = [False] * len(low)
    entities = []
    for start, end, kind in cands:
        if any(taken[start:end]):
            continue
        taken[start:end] = [True] * (end - start)
        entities.append(EntityAnnotation(start, end, kind))
    entities.sort(key=lambda e: e.start)

    deps = []
    for e in entities:
        if e.type not in _HEAD_TYPES:
            continue
        head = e.end - 1
        j = e.start - 1
        while j >= 0 and _adjective_like(low[j], lexicon):
            deps.append(DependencyEdge(head, j, "amod"))
            j -= 1
    return entities, deps


def annotate_record(rec: CorpusRecord, lexicon: dict[str, str]) -> CorpusRecord:
    entities, deps = heuristic_annotate(rec.words, lexicon)
    meta = dict(rec.meta, annotator="heuristic")
    return CorpusRecord(rec.id, rec.findings, rec.impression, rec.words, entities, deps, meta)


# ---------------------------------------------------------------- synthetic corpus

SEVERITY = ("small", "moderate", "large", "mild", "minimal", "trace")
SIDE = ("left", "right", "bilateral")
FINDINGS = (  # (anatomy word, observation word)
    ("pleural", "effusion"),
    ("basilar", "atelectasis"),
    ("apical", "pneumothorax"),
    ("perihilar", "opacity"),
    ("retrocardiac", "consolidation"),
    ("interstitial", "markings"),
    ("lobar", "pneumonia"),
    ("hilar", "adenopathy"),
)
FILLERS = (  # (sentence words, dependencies as (head, dep, rel) over sentence positions)
    ("the heart size is normal .".split(), [(1, 0, "det"), (4, 1, "nsubj"), (4, 2, "cop")]),
    ("the mediastinal contours are unremarkable .".split(), [(2, 0, "det"), (2, 1, "amod"), (4, 2, "nsubj")]),
    ("no acute osseous abnormality is seen .".split(), [(3, 0, "det"), (3, 1, "amod"), (3, 2, "amod"), (5, 3, "nsubj")]),
    ("the visualized upper abdomen is unremarkable .".split(), [(3, 0, "det"), (3, 1, "amod"), (3, 2, "amod"), (5, 3, "nsubj")]),
    ("pulmonary vasculature is within normal limits .".split(), [(1, 0, "amod"), (5, 1, "nsubj"), (5, 4, "amod")]),
    ("there is no evidence of free air .".split(), [(1, 0, "expl"), (3, 2, "det"), (1, 3, "nsubj"), (6, 5, "amod"), (3, 6, "nmod")]),
    ("the trachea is midline .".split(), [(1, 0, "det"), (3, 1, "nsubj"), (3, 2, "cop")]),
    ("sternotomy wires are intact .".split(), [(1, 0, "compound"), (3, 1, "nsubj"), (3, 2, "cop")]),
)
FILLER_ROOTS = (4, 4, 5, 5, 5, 1, 3, 3)


def _key_sentence(sev: str, side: str, anat: str, obs: str, style: int, also: bool):
    """Words, entities and dependencies (sentence-relative) for one abnormal finding."""
    if style == 0:
        # there is a(lso) <sev> <side> <anat> <obs> .
        words = ["there", "is", "also" if also else "a", sev, side, anat, obs, "."]
        o = 6
        ents = [(3, 4, "observation_modifier"), (4, 5, "anatomy_modifier"), (5, 6, "anatomy"), (6, 7, "observation")]
        deps = [(1, 0, "expl"), (-1, 1, "root"), (1, o, "nsubj"), (o, 3, "amod"), (o, 4, "amod"), (o, 5, "amod")]
    else:
        # there is a <side> <anat> <obs> which is <sev> in size .
        words = ["there", "is", "a", side, anat, obs, "which", "is", sev, "in", "size", "."]
        o = 5
        ents = [(3, 4, "anatomy_modifier"), (4, 5, "anatomy"), (5, 6, "observation"), (8, 9, "observation_modifier")]
        deps = [(1, 0, "expl"), (-1, 1, "root"), (1, o, "nsubj"), (o, 3, "amod"), (o, 4, "amod"),
                (o, 8, "acl:relcl"), (8, 6, "nsubj"), (8, 7, "cop"), (10, 9, "case"), (8, 10, "obl")]
    if style == 0 and not also:
        deps.append((o, 2, "det"))
    return words, ents, deps


def generate_synthetic_corpus(count: int, seed: int = 0) -> list[CorpusRecord]:
    """Template reports whose impression compresses the annotated abnormal findings.

    Each record has one or two abnormal findings mixed with normal filler
    sentences; the impression lists "<severity> <side> <anatomy> <observation>"
    for each finding in order of appearance.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = random.Random(seed)
    records = []
    for idx in range(count):
        n_find = 1 if rng.random() < 0.6 else 2
        chosen = rng.sample(range(len(FINDINGS)), n_find)
        n_fill = rng.randint(1, 3)
        fillers = rng.sample(range(len(FILLERS)), n_fill)
        blocks = [("key", c) for c in chosen] + [("fill", f) for f in fillers]
        rng.shuffle(blocks)
        words: list[str] = []
        entities, deps = [], []
        phrases = []
        seen_key = False
        for kind, which in blocks:
            off = len(words)
            if kind == "key":
                anat, obs = FINDINGS[which]
                sev, side = rng.choice(SEVERITY), rng.choice(SIDE)
                style = rng.randint(0, 1)
                w, es, ds = _key_sentence(sev, side, anat, obs, style, also=seen_key and style == 0)
                seen_key = True
                phrases.append(f"{sev} {side} {anat} {obs}")
                entities += [EntityAnnotation(off + a, off + b, t) for a, b, t in es]
            else:
                w, ds = FILLERS[which]
                ds = list(ds) + [(-1, FILLER_ROOTS[which], "root")]
            deps += [DependencyEdge(h if h < 0 else off + h, off + d, r) for h, d, r in ds]
            words += w
        findings = " ".join(words).replace(" .", ".")
        impression = " and ".join(phrases) + "."
        records.append(CorpusRecord(f"synth-{seed}-{idx:05d}", findings, impression, words, entities, deps,
                                    {"source": "synthetic"}))
    return records


IMPRESSION_FUNCTION_WORDS = {"and", "."}
