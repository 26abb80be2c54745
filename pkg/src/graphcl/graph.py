"""Directed subword relation graphs built from entity and dependency annotations."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .tokenizer import TokenizedText

ENTITY_TYPES = ("anatomy", "observation", "anatomy_modifier", "observation_modifier")
DEPENDENCY_SCOPES = ("entity_touching", "all")


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class EntityAnnotation:
    start: int
    end: int
    type: str

    def validate(self, n_words: int) -> None:
        if not 0 <= self.start < self.end <= n_words:
            raise AnnotationError(f"entity [{self.start}, {self.end}) outside 0..{n_words} words")
        if self.type not in ENTITY_TYPES:
            raise AnnotationError(f"entity type {self.type!r} is not one of {ENTITY_TYPES}")

    def to_json(self) -> dict:
        return {"start": self.start, "end": self.end, "type": self.type}


@dataclass(frozen=True)
class DependencyEdge:
    head: int
    dep: int
    rel: str = ""

    @property
    def is_root(self) -> bool:
        return self.head == -1

    def validate(self, n_words: int) -> None:
        if not 0 <= self.dep < n_words:
            raise AnnotationError(f"dependency dependent {self.dep} outside 0..{n_words - 1}")
        if self.is_root:
            return
        if not 0 <= self.head < n_words:
            raise AnnotationError(f"dependency head {self.head} outside 0..{n_words - 1}")
        if self.head == self.dep:
            raise AnnotationError(f"dependency head equals dependent ({self.head})")

    def to_json(self) -> dict:
        return {"head": self.head, "dep": self.dep, "rel": self.rel}


@dataclass
class GraphConfig:
    dependency_scope: str = "entity_touching"
    reverse_dependencies: bool = False

    def __post_init__(self):
        if self.dependency_scope not in DEPENDENCY_SCOPES:
            raise ValueError(f"dependency_scope must be one of {DEPENDENCY_SCOPES}")


@dataclass
class RelationGraph:
    n: int
    edges: frozenset  # of (source, target)
    key: tuple = field(init=False)

    def __post_init__(self):
        self.edges = frozenset(self.edges)
        for s, t in self.edges:
            if not (0 <= s < self.n and 0 <= t < self.n):
                raise ValueError(f"edge ({s}, {t}) outside {self.n} nodes")
            if s == t:
                raise ValueError(f"self-loop on node {s}")
        self.key = tuple(sorted({i for e in self.edges for i in e}))

    def adjacency(self) -> np.ndarray:
        """Boolean matrix with ``adj[target, source]`` set for each edge."""
        adj = np.zeros((self.n, self.n), dtype=bool)
        for s, t in self.edges:
            adj[t, s] = True
        return adj

    def key_mask(self) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        m[list(self.key)] = True
        return m

    def to_json(self) -> str:
        return json.dumps({"n": self.n, "edges": [list(e) for e in sorted(self.edges)], "key": list(self.key)})

    @classmethod
    def from_json(cls, text: str) -> "RelationGraph":
        obj = json.loads(text)
        g = cls(obj["n"], frozenset(tuple(e) for e in obj["edges"]))
        if list(g.key) != list(obj.get("key", g.key)):
            raise ValueError("stored key set disagrees with the edges")
        return g


def key_token_indices(graph: RelationGraph) -> list[int]:
    """Sorted node indices incident to at least one edge."""
    return sorted({i for e in graph.edges for i in e})


def build_relation_graph(
    tokenized: TokenizedText,
    entities: Iterable[EntityAnnotation],
    dependencies: Iterable[DependencyEdge],
    config: GraphConfig | None = None,
) -> RelationGraph:
    config = config or GraphConfig()
    spans = tokenized.spans
    n_words = len(spans)
    entities = list(entities)
    dependencies = list(dependencies)
    for i, e in enumerate(entities):
        try:
            e.validate(n_words)
        except AnnotationError as err:
            raise AnnotationError(f"entities[{i}]: {err}") from None
    for i, d in enumerate(dependencies):
        try:
            d.validate(n_words)
        except AnnotationError as err:
            raise AnnotationError(f"dependencies[{i}]: {err}") from None

    edges: set[tuple[int, int]] = set()
    in_entity = np.zeros(n_words, dtype=bool)
    for e in entities:
        lo, hi = spans[e.start][0], spans[e.end - 1][1]
        for a in range(lo, hi - 1):
            edges.add((a, a + 1))
            edges.add((a + 1, a))
        in_entity[e.start:e.end] = True

    for d in dependencies:
        if d.is_root:
            continue
        if config.dependency_scope == "entity_touching" and not (in_entity[d.head] or in_entity[d.dep]):
            continue
        src, dst = (d.dep, d.head) if config.reverse_dependencies else (d.head, d.dep)
        for s in range(*spans[src]):
            for t in range(*spans[dst]):
                if s != t:
                    edges.add((s, t))
    return RelationGraph(len(tokenized), frozenset(edges))


def _dot_quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_dot(graph: RelationGraph, tokenized: TokenizedText, name: str = "relation_graph") -> str:
    """DOT digraph; key nodes are drawn filled."""
    key = set(graph.key)
    lines = [f"digraph {_dot_quote(name)} {{", "  node [shape=box];"]
    for i, piece in enumerate(tokenized.pieces):
        style = ", style=filled, fillcolor=gold" if i in key else ""
        lines.append(f"  n{i} [label={_dot_quote(piece)}{style}];")
    for s, t in sorted(graph.edges):
        lines.append(f"  n{s} -> n{t};")
    lines.append("}")
    return "\n".join(lines) + "\n"
