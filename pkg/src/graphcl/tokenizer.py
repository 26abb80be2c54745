"""WordPiece vocabulary and greedy longest-match segmentation.

Word-to-subword alignment is kept on every encoding because entity and
dependency annotations are word-level while the model works on subwords.
"""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

PAD, UNK, BOS, EOS = "[PAD]", "[UNK]", "[BOS]", "[EOS]"
SPECIALS = (PAD, UNK, BOS, EOS)
PREFIX = "##"

_PUNCT = re.compile(r"([^\w\s])")
_MAX_PIECE_CHARS = 24


def basic_tokenize(text: str) -> list[str]:
    """Lowercase, split punctuation into standalone tokens, split on whitespace."""
    return _PUNCT.sub(r" \1 ", text.lower()).split()


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != SPECIALS:
            raise ValueError(f"vocabulary must start with {SPECIALS}, got {tokens[:4]}")
        if len(set(tokens)) != len(tokens):
            dupes = sorted(t for t, c in Counter(tokens).items() if c > 1)
            raise ValueError(f"duplicate vocabulary entries: {dupes[:5]}")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}

    pad_id, unk_id, bos_id, eos_id = 0, 1, 2, 3

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, self.unk_id)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


def build_vocab(corpus: Iterable[Sequence[str]], max_size: int = 8192, min_freq: int = 1) -> Vocab:
    """Harvest frequent word-initial and continuation pieces from ``corpus``.

    Specials come first, then every character seen (in both word-initial and
    ``##`` form) so any word over the seen alphabet can be segmented. The
    remaining slots go to multi-character pieces ranked by how many
    characters they cover across the corpus (count x (len - 1)).
    """
    if max_size <= 4:
        raise ValueError("max_size must exceed the four special tokens")
    words = Counter(w.lower() for seq in corpus for w in seq)
    if not words:
        raise ValueError("cannot build a vocabulary from an empty corpus")

    initial_chars: set[str] = set()
    cont_chars: set[str] = set()
    pieces: Counter = Counter()
    for word, freq in words.items():
        initial_chars.add(word[0])
        cont_chars.update(word[1:])
        n = len(word)
        for end in range(2, min(n, _MAX_PIECE_CHARS) + 1):
            pieces[word[:end]] += freq
        for start in range(1, n):
            for end in range(start + 2, min(n, start + _MAX_PIECE_CHARS) + 1):
                pieces[PREFIX + word[start:end]] += freq

    tokens = list(SPECIALS)
    tokens += sorted(initial_chars)
    tokens += sorted(PREFIX + c for c in cont_chars)
    if len(tokens) > max_size:
        raise ValueError(f"max_size {max_size} cannot hold the {len(tokens)} specials and characters")

    def covered(item):
        piece, count = item
        chars = len(piece) - (len(PREFIX) if piece.startswith(PREFIX) else 0)
        return (-count * (chars - 1), piece)

    for piece, count in sorted(pieces.items(), key=covered):
        if len(tokens) >= max_size:
            break
        if count < min_freq:
            continue
        tokens.append(piece)
    return Vocab(tokens)


@dataclass
class TokenizedText:
    ids: list[int]
    pieces: list[str]
    spans: list[tuple[int, int]]  # word index -> [start, end) over subwords

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_words(self) -> int:
        return len(self.spans)


def segment_word(word: str, vocab: Vocab) -> list[str]:
    """Greedy longest-match-first; a word with no full segmentation is UNK."""
    out = []
    start = 0
    while start < len(word):
        end = len(word)
        piece = None
        while end > start:
            cand = word[start:end] if start == 0 else PREFIX + word[start:end]
            if cand in vocab:
                piece = cand
                break
            end -= 1
        if piece is None:
            return [UNK]
        out.append(piece)
        start = end
    return out


def encode_words(words: Sequence[str], vocab: Vocab) -> TokenizedText:
    if not words:
        raise ValueError("encode_words: no words given")
    ids, pieces, spans = [], [], []
    for w in words:
        seg = segment_word(w.lower(), vocab)
        spans.append((len(pieces), len(pieces) + len(seg)))
        pieces.extend(seg)
        ids.extend(vocab.id(p) for p in seg)
    return TokenizedText(ids, pieces, spans)


def decode_ids(ids: Iterable[int], vocab: Vocab) -> str:
    """Join pieces into whitespace-separated words, dropping specials."""
    words: list[str] = []
    for i in ids:
        i = int(i)
        if not 0 <= i < len(vocab):
            raise IndexError(f"decode_ids: id {i} outside vocabulary of size {len(vocab)}")
        tok = vocab.itos[i]
        if tok in SPECIALS:
            continue
        if tok.startswith(PREFIX) and words:
            words[-1] += tok[len(PREFIX):]
        else:
            words.append(tok)
    return " ".join(words)
