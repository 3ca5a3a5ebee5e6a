"""Synthetic accent corpora with planted acoustic and lexical rules.

Each word is a short harmonic burst. Words realized as *prominent* are louder
and higher pitched than *plain* ones. The accent label of a word is drawn from
its type's accent probability (the lexical rule); the acoustic realization
follows the label with probability ``acoustic_strength`` and is a fair coin
otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Corpus, Label, Utterance, WordToken, write_manifest
from .dsp import SignalBuffer, write_wav
from .embeddings import DEFAULT_STOPWORDS, EmbeddingTable

CONTENT_WORDS = (
    "radio", "boston", "station", "morning", "city", "council", "budget", "river",
    "street", "harbor", "school", "mayor", "report", "weather", "market", "garden",
    "church", "bridge", "office", "winter", "summer", "police", "court", "north",
    "south", "traffic", "museum", "library", "island", "village",
)
STOPWORDS = tuple(sorted(DEFAULT_STOPWORDS))
DEFAULT_VOCAB = CONTENT_WORDS + STOPWORDS


@dataclass(frozen=True)
class SyntheticSpec:
    n_words: int = 2000
    vocab: tuple = DEFAULT_VOCAB
    lexical_correlation: float = 0.5
    acoustic_strength: float = 1.0
    invert_lexical: bool = False
    # explicit per-type accent probabilities override the propensity rule
    accent_prob: dict | None = None
    stopword_share: float = 0.2
    words_per_utterance: tuple = (6, 12)
    sample_rate: int = 16000
    propensity_seed: int = 1234
    seed: int = 0
    name: str = "synth"

    def __post_init__(self):
        if not 0.0 <= self.acoustic_strength <= 1.0:
            raise ValueError("acoustic_strength must be in [0, 1]")
        if not 0.0 <= self.lexical_correlation <= 1.0:
            raise ValueError("lexical_correlation must be in [0, 1]")
        if self.n_words < 1:
            raise ValueError("n_words must be positive")


@dataclass
class SyntheticCorpus:
    corpus: Corpus
    manifest_path: Path
    accent_prob: dict
    prominent: np.ndarray  # per-token acoustic realization, corpus word order
    spec: SyntheticSpec = field(repr=False, default=None)


def accent_probabilities(spec: SyntheticSpec) -> dict:
    """P(accented) per word type under the spec's lexical rule."""
    if spec.accent_prob is not None:
        probs = {w: float(spec.accent_prob.get(w, 0.5)) for w in spec.vocab}
        return probs
    rng = np.random.default_rng(spec.propensity_seed)
    content = [w for w in spec.vocab if w not in DEFAULT_STOPWORDS]
    prone = set(rng.permutation(content)[: len(content) // 2].tolist())
    c = spec.lexical_correlation
    probs = {}
    for w in spec.vocab:
        is_prone = w in prone
        if spec.invert_lexical:
            is_prone = not is_prone
        probs[w] = c if is_prone else 1.0 - c
    return probs


def _type_weights(spec: SyntheticSpec) -> np.ndarray:
    stop = np.array([w in DEFAULT_STOPWORDS for w in spec.vocab])
    if not stop.any() or stop.all():
        return np.full(len(spec.vocab), 1.0 / len(spec.vocab))
    weights = np.where(stop, spec.stopword_share / stop.sum(), (1 - spec.stopword_share) / (~stop).sum())
    return weights / weights.sum()


def _burst(rng, prominent: bool, duration: float, sr: int) -> np.ndarray:
    n = int(round(duration * sr))
    if prominent:
        amp, f0 = rng.uniform(0.5, 0.8), rng.uniform(170.0, 230.0)
        glide = 1.15
    else:
        amp, f0 = rng.uniform(0.12, 0.25), rng.uniform(95.0, 135.0)
        glide = 0.95
    freq = f0 * np.linspace(1.0, glide, n)
    phase = 2 * np.pi * np.cumsum(freq) / sr
    wave = np.sin(phase) + 0.5 * np.sin(2 * phase) + 0.25 * np.sin(3 * phase)
    wave /= 1.75
    wave += 0.03 * rng.standard_normal(n)
    ramp = min(int(0.015 * sr), n // 2)
    env = np.ones(n)
    if ramp:
        edge = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[:ramp] = edge
        env[n - ramp:] = edge[::-1]
    return amp * env * wave


def generate_synthetic_corpus(spec: SyntheticSpec, out_dir) -> SyntheticCorpus:
    """Write WAV files and a manifest for ``spec`` under ``out_dir``."""
    out_dir = Path(out_dir)
    audio_dir = out_dir / f"{spec.name}_audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    probs = accent_probabilities(spec)
    weights = _type_weights(spec)
    sr = spec.sample_rate
    lo, hi = spec.words_per_utterance

    utterances, realized = [], []
    remaining, k = spec.n_words, 0
    while remaining > 0:
        count = min(remaining, int(rng.integers(lo, hi + 1)))
        remaining -= count
        utt_id = f"{spec.name}_{k:04d}"
        speaker = f"spk{k % 4}"
        pieces = [0.004 * rng.standard_normal(int(0.05 * sr))]
        cursor = len(pieces[0])
        words = []
        for i in range(count):
            orth = spec.vocab[int(rng.choice(len(spec.vocab), p=weights))]
            label = Label.ACCENTED if rng.random() < probs[orth] else Label.NONE
            if rng.random() < spec.acoustic_strength:
                prominent = label is Label.ACCENTED
            else:
                prominent = bool(rng.random() < 0.5)
            burst = _burst(rng, prominent, rng.uniform(0.18, 0.32), sr)
            start = cursor
            pieces.append(burst)
            cursor += len(burst)
            words.append(WordToken(orth, round(start / sr, 6), round(cursor / sr, 6), label, speaker, utt_id, i,
                                   "H*" if label is Label.ACCENTED else ""))
            realized.append(prominent)
            gap = 0.004 * rng.standard_normal(int(rng.uniform(0.03, 0.08) * sr))
            pieces.append(gap)
            cursor += len(gap)
        # trailing silence keeps the last word inside the 50 ms frame grid
        pieces.append(0.004 * rng.standard_normal(int(0.06 * sr)))
        signal = np.clip(np.concatenate(pieces), -1.0, 1.0)
        wav_path = audio_dir / f"{utt_id}.wav"
        write_wav(wav_path, SignalBuffer(signal, sr))
        utterances.append(Utterance(utt_id, str(wav_path), tuple(words)))
        k += 1

    corpus = Corpus(spec.name, utterances)
    manifest = out_dir / f"{spec.name}.tsv"
    write_manifest(corpus, manifest)
    return SyntheticCorpus(corpus, manifest, probs, np.array(realized), spec)


def synthetic_embedding_table(vocab=DEFAULT_VOCAB, dim: int = 300, seed: int = 0,
                              source_kind: str = "glove") -> EmbeddingTable:
    """Random fixed vectors per type, standing in for a pre-trained table."""
    rng = np.random.default_rng(seed)
    entries = {w: rng.normal(0.0, 0.4, dim) for w in vocab}
    return EmbeddingTable(dim, entries, source_kind)
