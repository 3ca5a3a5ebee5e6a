"""
Frame-level acoustic descriptors
================================

Six descriptors per 10 ms frame: RMS energy and loudness on 20 ms windows,
F0, voicing probability, HNR and zero-crossing rate on 50 ms windows.
"""

import numpy as np

from pitchaccent.dsp import SignalBuffer, extract_lld_track

sr = 16000
t = np.arange(sr) / sr

# one second of a 220 Hz tone, then one second of silence
tone = np.sin(2 * np.pi * 220 * t)
signal = SignalBuffer(np.concatenate([tone, np.zeros(sr)]), sr)

track = extract_lld_track(signal)
print("frames:", len(track), "features:", track.feature_names)

# the tone: F0 near 220 Hz, voicing near 1, high HNR
mid = slice(10, 90)
print("f0    ", track.column("f0_smoothed")[mid].mean())
print("voice ", track.column("voicing_prob")[mid].mean())
print("hnr   ", track.column("hnr_db")[mid].mean())

# zero-crossing rate of a sine is about 2f/sr
print("zcr   ", track.column("zcr")[mid].mean(), "expected about", 2 * 220 / sr)

# silence: zero energy, unvoiced, HNR at its -100 dB floor
quiet = slice(110, 190)
print("silent rms", track.column("rms_energy")[quiet].max(), "hnr", track.column("hnr_db")[quiet].max())
