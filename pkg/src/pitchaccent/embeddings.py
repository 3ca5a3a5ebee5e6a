"""Pre-trained word embedding tables and lexical input vectors."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Label, Utterance

DEFAULT_DIM = 300
DEFAULT_STOPWORDS = frozenset({"a", "and", "of", "to"})
EMPTY_TOKEN = "<empty>"

_NOISE = re.compile(r"[^a-z'\-]")


class EmbeddingFormatError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingTable:
    dim: int
    entries: dict
    source_kind: str = "glove"

    def __contains__(self, token) -> bool:
        return token in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def without(self, token: str) -> "EmbeddingTable":
        entries = {k: v for k, v in self.entries.items() if k != token}
        return EmbeddingTable(self.dim, entries, self.source_kind)


def load_embedding_text(path, dim: int = DEFAULT_DIM, source_kind: str = "glove") -> EmbeddingTable:
    """Read a GloVe-style text table; ``w2v`` files carry a ``count dim`` header.

    Duplicate tokens keep their first vector.
    """
    if source_kind not in ("glove", "w2v"):
        raise ValueError(f"unknown embedding kind {source_kind!r}")
    entries: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").rstrip().split(" ")
            if not parts or parts == [""]:
                continue
            if source_kind == "w2v" and lineno == 1:
                if len(parts) != 2:
                    raise EmbeddingFormatError("line 1: expected 'count dim' header")
                if int(parts[1]) != dim:
                    raise EmbeddingFormatError(f"line 1: header dim {parts[1]} != {dim}")
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise EmbeddingFormatError(f"line {lineno}: expected {dim} values, got {len(values)}")
            if not token or token in entries:
                continue
            try:
                entries[token] = np.array(values, dtype=np.float64)
            except ValueError:
                raise EmbeddingFormatError(f"line {lineno}: non-numeric vector entry") from None
    return EmbeddingTable(dim, entries, source_kind)


def write_embedding_text(path, table: EmbeddingTable) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if table.source_kind == "w2v":
            fh.write(f"{len(table)} {table.dim}\n")
        for token, vec in table.entries.items():
            fh.write(token + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def normalize_word(raw: str) -> list[str]:
    """Clean an orthographic word label into lookup candidates.

    Lowercases, drops characters other than letters, apostrophes and hyphens,
    keeps the head of a contraction (she'll -> she) and the last part of a
    hyphenated compound (eighty-eight -> eight).
    """
    text = _NOISE.sub("", raw.lower())
    if "-" in text:
        parts = [p for p in text.split("-") if p.strip("'")]
        text = parts[-1] if parts else ""
    if "'" in text:
        parts = [p for p in text.split("'") if p]
        text = parts[0] if parts else ""
    return [text or EMPTY_TOKEN]


def canonical_token(raw: str) -> str:
    return normalize_word(raw)[0]


def lookup(table: EmbeddingTable, token: str) -> np.ndarray:
    """Stored vector, or all ones for out-of-vocabulary tokens."""
    vec = table.entries.get(token)
    if vec is None:
        return np.ones(table.dim)
    return vec


def ngram_vectors(utterance: Utterance, word_index: int, n: int, table: EmbeddingTable) -> np.ndarray:
    if n not in (1, 3):
        raise ValueError(f"n must be 1 or 3, got {n}")
    words = utterance.words
    if not 0 <= word_index < len(words):
        raise IndexError(word_index)
    current = lookup(table, canonical_token(words[word_index].orthography))
    if n == 1:
        return current.copy()
    zero = np.zeros(table.dim)
    left = lookup(table, canonical_token(words[word_index - 1].orthography)) if word_index > 0 else zero
    right = (lookup(table, canonical_token(words[word_index + 1].orthography))
             if word_index + 1 < len(words) else zero)
    return np.concatenate([left, current, right])


def corpus_lexical_inputs(corpus: Corpus, table: EmbeddingTable, n: int = 1) -> np.ndarray:
    rows = [ngram_vectors(u, i, n, table) for u in corpus.utterances for i in range(len(u.words))]
    return np.stack(rows) if rows else np.zeros((0, n * table.dim))


def stopword_mask(corpus: Corpus, stopwords=DEFAULT_STOPWORDS) -> np.ndarray:
    return np.array([canonical_token(w.orthography) in stopwords for w in corpus.words()], dtype=bool)


@dataclass(frozen=True)
class OOVReport:
    tokens: int
    types: int
    accent_rate: float
    stopword_rate: float
    accented_stopwords: float
    accented_remaining: float

    def to_text(self, kind: str = "") -> str:
        pct = lambda v: f"{100 * v:.1f}%"
        title = f"{kind} OOV" if kind else "OOV"
        lines = [
            title,
            f"tokens: {self.tokens}",
            f"types: {self.types}",
            f"accent rate: {pct(self.accent_rate)}",
            f"stopword rate: {pct(self.stopword_rate)}",
            f"accented stopwords: {pct(self.accented_stopwords)}",
            f"accented remaining: {pct(self.accented_remaining)}",
        ]
        return "\n".join(lines) + "\n"


def oov_report(corpus: Corpus, table: EmbeddingTable, stopwords=DEFAULT_STOPWORDS) -> OOVReport:
    rate = lambda num, den: num / den if den else 0.0
    tokens = stop = stop_acc = acc = 0
    types = set()
    for w in corpus.words():
        tok = canonical_token(w.orthography)
        if tok in table:
            continue
        accented = w.label is Label.ACCENTED
        tokens += 1
        types.add(tok)
        acc += accented
        if tok in stopwords:
            stop += 1
            stop_acc += accented
    rest = tokens - stop
    return OOVReport(
        tokens=tokens,
        types=len(types),
        accent_rate=rate(acc, tokens),
        stopword_rate=rate(stop, tokens),
        accented_stopwords=rate(stop_acc, stop),
        accented_remaining=rate(acc - stop_acc, rest),
    )
