"""
A synthetic accent corpus
=========================

Words are harmonic bursts. Accented words are usually louder and higher
pitched; how often is set by the acoustic strength. Word identity predicts
accent through a per-type accent probability.
"""

import tempfile
from pathlib import Path

import numpy as np

from pitchaccent.corpus import corpus_stats, load_manifest
from pitchaccent.embeddings import oov_report
from pitchaccent.synthetic import SyntheticSpec, generate_synthetic_corpus, synthetic_embedding_table

out = Path(tempfile.mkdtemp())
spec = SyntheticSpec(n_words=400, lexical_correlation=0.9, acoustic_strength=0.8, seed=1, name="demo")
syn = generate_synthetic_corpus(spec, out)

# the manifest is a plain tab-separated word list with times and ToBI labels
print(syn.manifest_path.read_text().splitlines()[:3])

corpus = load_manifest(syn.manifest_path)
print(corpus_stats(corpus).describe())

# accent rate per word type follows the planted propensity
labels = corpus.labels()
words = [w.orthography for w in corpus.words()]
for w in ("radio", "city", "and"):
    rate = np.mean([lab for o, lab in zip(words, labels) if o == w])
    print(f"{w:>6}: designed {syn.accent_prob[w]:.2f}  observed {rate:.2f}")

# drop one word from the embedding table; the report covers only the OOV tokens
table = synthetic_embedding_table(dim=50).without("radio")
print(oov_report(corpus, table).to_text("synthetic"))
