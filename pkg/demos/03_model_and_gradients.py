"""
The lexico-acoustic network
===========================

A (7 x s_max) matrix (six descriptors plus a row marking the current word)
goes through two strided convolutions and a max over time. An optional
embedding branch squeezes word vectors through a small bottleneck. Both are
concatenated in front of a two-way softmax.
"""

import numpy as np

from pitchaccent.corpus import build_input_matrix
from pitchaccent.model import AcousticConfig, LexicalConfig, build_model, gradient_check

rng = np.random.default_rng(0)

acoustic = AcousticConfig(s_max=50)
print("conv lengths for s_max=50:", acoustic.conv_lengths())

model = build_model(acoustic, LexicalConfig(embed_dim=300, n_words=3, bottleneck_n=10), "acoustic+embs", rng)
print({k: v.shape for k, v in model.params.items()})
print("fused width:", model.fused_width)

# a context window of 40 frames where frames 12..25 belong to the current word
frames = rng.normal(size=(40, 6))
matrix = build_input_matrix(frames, (12, 25), 50)
print("indicator row:", matrix.indicator.astype(int))

# probabilities are ordered (None, Accented)
probs = model.forward(matrix.values[None], rng.normal(size=(1, 900)))
print("P(None), P(Accented):", probs[0])

# analytic gradients against central differences
print("max relative gradient error:", gradient_check(seed=7))
