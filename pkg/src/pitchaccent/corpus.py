"""Time-aligned word corpora, ToBI label mapping, and CNN input matrices."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterable

import numpy as np

from .dsp import FrameFeatureTrack, HOP_MS, extract_lld_track, load_wav

log = logging.getLogger(__name__)

N_DESCRIPTORS = 6
MANIFEST_COLUMNS = (
    "utterance_id", "speaker", "audio_path", "word_index",
    "orthography", "start_s", "end_s", "tobi_label",
)
# Smallest frame capacity for which both conv layers yield at least one output.
MIN_S_MAX = 18


class Label(IntEnum):
    """Binary accent class; integer values double as softmax indices."""

    NONE = 0
    ACCENTED = 1


class ManifestError(ValueError):
    pass


def map_tobi_label(raw: str) -> Label:
    """Collapse a ToBI accent field to Accented/None.

    Anything containing ``*`` is an accent unless it is marked unsure with a
    trailing ``?``; empty fields and ``none`` are unaccented.
    """
    text = (raw or "").strip()
    if not text or text.lower() in ("none", "0", "-"):
        return Label.NONE
    if text.endswith("?"):
        return Label.NONE
    if "*" in text:
        return Label.ACCENTED
    if text.lower() in ("accented", "1"):
        return Label.ACCENTED
    log.warning("unknown ToBI label %r mapped to None", raw)
    return Label.NONE


@dataclass(frozen=True)
class WordToken:
    orthography: str
    start_s: float
    end_s: float
    label: Label
    speaker_id: str
    utterance_id: str
    index_in_utterance: int
    tobi: str = ""

    def __post_init__(self):
        if not self.orthography:
            raise ValueError("empty orthography")
        if not (self.end_s > self.start_s >= 0):
            raise ValueError(f"invalid word interval [{self.start_s}, {self.end_s}]")


@dataclass(frozen=True)
class Utterance:
    id: str
    audio_path: str
    words: tuple

    def __post_init__(self):
        for prev, cur in zip(self.words, self.words[1:]):
            if cur.start_s < prev.start_s:
                raise ValueError(f"utterance {self.id}: words not sorted by start time")
            if cur.start_s < prev.end_s - 1e-9:
                raise ValueError(f"utterance {self.id}: overlapping words at index {cur.index_in_utterance}")


@dataclass
class Corpus:
    name: str
    utterances: list
    s_max: int | None = None

    def words(self) -> list:
        return [w for u in self.utterances for w in u.words]

    def __len__(self) -> int:
        return sum(len(u.words) for u in self.utterances)

    def labels(self) -> np.ndarray:
        return np.array([int(w.label) for w in self.words()], dtype=np.int64)


@dataclass
class InputMatrix:
    values: np.ndarray
    current_span: tuple
    n_frames: int = 0

    @property
    def indicator(self) -> np.ndarray:
        return self.values[N_DESCRIPTORS]


@dataclass(frozen=True)
class CorpusStats:
    word_count: int
    accented_count: int
    majority_class_rate: float
    majority_class: Label

    def describe(self) -> str:
        name = "accented" if self.majority_class is Label.ACCENTED else "none"
        return f"{self.word_count} words, {self.accented_count} accented, {100 * self.majority_class_rate:.1f}% {name}"


def load_manifest(path, name: str | None = None, check_audio: bool = True) -> Corpus:
    """Parse a tab-separated word manifest into a validated ``Corpus``.

    Audio paths are resolved relative to the manifest's directory. Errors name
    the offending line number (1-based, header is line 1).
    """
    path = Path(path)
    base = path.parent
    groups: dict[str, list] = {}
    audio: dict[str, str] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty manifest") from None
        missing = [c for c in MANIFEST_COLUMNS if c not in header]
        if missing:
            raise ManifestError(f"{path}: line 1: missing column(s) {', '.join(missing)}")
        col = {c: header.index(c) for c in MANIFEST_COLUMNS}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise ManifestError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            get = lambda c: row[col[c]]
            try:
                start, end = float(get("start_s")), float(get("end_s"))
                index = int(get("word_index"))
            except ValueError as exc:
                raise ManifestError(f"{path}: line {lineno}: {exc}") from None
            if not end > start >= 0:
                raise ManifestError(f"{path}: line {lineno}: end_s {end} must exceed start_s {start} >= 0")
            orth = get("orthography")
            if not orth:
                raise ManifestError(f"{path}: line {lineno}: empty orthography")
            utt = get("utterance_id")
            apath = get("audio_path")
            if utt in audio and audio[utt] != apath:
                raise ManifestError(f"{path}: line {lineno}: utterance {utt} has conflicting audio paths")
            if check_audio and utt not in audio and not (base / apath).exists():
                raise ManifestError(f"{path}: line {lineno}: audio file not found: {apath}")
            audio[utt] = apath
            raw_label = get("tobi_label")
            groups.setdefault(utt, []).append(
                (lineno, WordToken(orth, start, end, map_tobi_label(raw_label), get("speaker"), utt, index, raw_label))
            )
    utterances = []
    for utt, rows in groups.items():
        rows.sort(key=lambda r: r[1].index_in_utterance)
        for (_, prev), (lineno, cur) in zip(rows, rows[1:]):
            if cur.index_in_utterance == prev.index_in_utterance:
                raise ManifestError(f"{path}: line {lineno}: duplicate word_index {cur.index_in_utterance}")
            if cur.start_s < prev.end_s - 1e-9:
                raise ManifestError(f"{path}: line {lineno}: non-monotone times in utterance {utt}")
        utterances.append(Utterance(utt, str(base / audio[utt]), tuple(r[1] for r in rows)))
    return Corpus(name or path.stem, utterances)


def write_manifest(corpus: Corpus, path, audio_root=None) -> None:
    """Write ``corpus`` as a manifest; audio paths are made relative to the file."""
    path = Path(path)
    root = Path(audio_root) if audio_root is not None else path.parent
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for utt in corpus.utterances:
            try:
                apath = str(Path(utt.audio_path).resolve().relative_to(root.resolve()))
            except ValueError:
                apath = utt.audio_path
            for w in utt.words:
                tobi = w.tobi if w.tobi else ("H*" if w.label is Label.ACCENTED else "")
                writer.writerow([utt.id, w.speaker_id, apath, w.index_in_utterance,
                                 w.orthography, f"{w.start_s:.6f}", f"{w.end_s:.6f}", tobi])


def corpus_stats(corpus: Corpus) -> CorpusStats:
    labels = corpus.labels()
    total = len(labels)
    if total == 0:
        raise ValueError("corpus_stats on an empty corpus")
    accented = int(labels.sum())
    majority = Label.ACCENTED if accented > total - accented else Label.NONE
    return CorpusStats(total, accented, max(accented, total - accented) / total, majority)


def time_to_frame(t: float) -> int:
    # small epsilon absorbs binary representation error (0.29 * 100 = 28.999...)
    return int(math.floor(t * 1000.0 / HOP_MS + 1e-6))


def word_frame_range(word: WordToken) -> tuple[int, int]:
    """Inclusive (first, last) frame indices of a word on the 10 ms grid."""
    first = time_to_frame(word.start_s)
    last = max(first, time_to_frame(word.end_s) - 1)
    return first, last


def window_frame_range(utterance: Utterance, word_index: int, context: int = 1) -> tuple[int, int, int, int]:
    words = utterance.words
    left = words[max(0, word_index - context)]
    right = words[min(len(words) - 1, word_index + context)]
    first, _ = word_frame_range(left)
    _, last = word_frame_range(right)
    cur_first, cur_last = word_frame_range(words[word_index])
    return first, last, cur_first, cur_last


def slice_word_frames(track: FrameFeatureTrack, utterance: Utterance, word_index: int, context: int = 1):
    """Frames spanning the word and its direct neighbours, plus the current span.

    Returns ``(frames, (span_first, span_last))`` with the span relative to the
    start of the slice.
    """
    if not 0 <= word_index < len(utterance.words):
        raise IndexError(f"word_index {word_index} out of range for utterance {utterance.id}")
    first, last, cur_first, cur_last = window_frame_range(utterance, word_index, context)
    n = len(track)
    if last >= n:
        log.warning("utterance %s word %d: boundary frame %d beyond track length %d, clipped",
                    utterance.id, word_index, last, n)
        last = n - 1
        cur_last = min(cur_last, last)
        cur_first = min(cur_first, last)
        first = min(first, cur_first)
    frames = track.frames[first : last + 1]
    return frames, (cur_first - first, cur_last - first)


def build_input_matrix(frames: np.ndarray, current_span: tuple, s_max: int) -> InputMatrix:
    """Lay ``frames`` out column-wise in a zero-padded (d+1) x s_max matrix.

    The last row is the position indicator: 1 on the current word's columns.
    """
    frames = np.asarray(frames, dtype=np.float64)
    n = frames.shape[0]
    if n > s_max:
        raise ValueError(f"window of {n} frames exceeds s_max={s_max}")
    lo, hi = current_span
    if not 0 <= lo <= hi < max(n, 1):
        raise ValueError(f"span {current_span} outside window of {n} frames")
    values = np.zeros((N_DESCRIPTORS + 1, s_max))
    values[:N_DESCRIPTORS, :n] = frames.T
    values[N_DESCRIPTORS, lo : hi + 1] = 1.0
    return InputMatrix(values, (lo, hi), n)


def compute_s_max(corpora: Iterable[Corpus], context: int = 1) -> int:
    """Largest context-window frame count over all words of all corpora."""
    longest = 0
    for corpus in corpora:
        for utt in corpus.utterances:
            for i in range(len(utt.words)):
                first, last, _, _ = window_frame_range(utt, i, context)
                longest = max(longest, last - first + 1)
    return max(longest, MIN_S_MAX)


def extract_tracks(corpus: Corpus) -> dict:
    """Feature track per utterance id, read from each utterance's audio."""
    return {u.id: extract_lld_track(load_wav(u.audio_path)) for u in corpus.utterances}


def corpus_matrices(corpus: Corpus, tracks: dict, s_max: int, context: int = 1) -> np.ndarray:
    """Stack every word's input matrix into an array of shape (N, d+1, s_max)."""
    out = np.zeros((len(corpus), N_DESCRIPTORS + 1, s_max))
    k = 0
    for utt in corpus.utterances:
        track = tracks[utt.id]
        for i in range(len(utt.words)):
            frames, span = slice_word_frames(track, utt, i, context)
            out[k] = build_input_matrix(frames, span, s_max).values
            k += 1
    return out
