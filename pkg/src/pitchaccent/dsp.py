"""Frame-level acoustic descriptors: energy, loudness, F0, voicing, HNR, ZCR.

Every track is emitted on a 10 ms hop grid. Intensity descriptors use 20 ms
windows, the pitch-related ones 50 ms windows; windows are left-aligned at
``i * hop`` so that one frame index addresses all six columns.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import median_filter

FEATURE_NAMES = ("rms_energy", "loudness", "f0_smoothed", "voicing_prob", "hnr_db", "zcr")
CSV_HEADER = "frame_idx,rms_energy,loudness,f0,voicing,hnr,zcr"

HOP_MS = 10
INTENSITY_WINDOW_MS = 20
PITCH_WINDOW_MS = 50

LOUDNESS_I0 = 1e-6
LOUDNESS_EXPONENT = 0.3
F0_MIN_HZ = 50.0
F0_MAX_HZ = 500.0
VOICING_THRESHOLD = 0.3
HNR_FLOOR_DB = -100.0
HNR_CEIL_DB = 100.0
# Shorter lags within this fraction of the ACF peak win (octave-error guard).
OCTAVE_TOLERANCE = 0.01


class WavFormatError(ValueError):
    """Raised for WAV files this module cannot decode."""


@dataclass(frozen=True)
class SignalBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain non-finite values")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FrameSpec:
    window_ms: int
    hop_ms: int = HOP_MS

    def __post_init__(self):
        if self.window_ms not in (INTENSITY_WINDOW_MS, PITCH_WINDOW_MS):
            raise ValueError(f"window_ms must be 20 or 50, got {self.window_ms}")
        if self.hop_ms != HOP_MS:
            raise ValueError(f"hop_ms is fixed at {HOP_MS}, got {self.hop_ms}")

    def window_samples(self, sample_rate: int) -> int:
        return int(round(self.window_ms * sample_rate / 1000))

    def hop_samples(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000))


@dataclass(frozen=True)
class FrameFeatureTrack:
    """Six descriptors per 10 ms frame, columns in ``FEATURE_NAMES`` order."""

    frames: np.ndarray
    hop_ms: int = HOP_MS
    feature_names: tuple = field(default=FEATURE_NAMES)

    def __len__(self) -> int:
        return self.frames.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.frames[:, self.feature_names.index(name)]

    def check_ranges(self) -> None:
        f = self.frames
        if f.ndim != 2 or f.shape[1] != 6:
            raise ValueError(f"expected (n, 6) frames, got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ValueError("track contains non-finite values")
        if np.any(f[:, 2] < 0):
            raise ValueError("negative F0")
        if np.any((f[:, 3] < 0) | (f[:, 3] > 1)):
            raise ValueError("voicing probability outside [0, 1]")
        if np.any((f[:, 4] < HNR_FLOOR_DB) | (f[:, 4] > HNR_CEIL_DB)):
            raise ValueError("HNR outside [-100, 100] dB")
        if np.any((f[:, 5] < 0) | (f[:, 5] > 1)):
            raise ValueError("zero-crossing rate outside [0, 1]")


def load_wav(path) -> SignalBuffer:
    """Read a mono 16-bit PCM WAV file, scaling samples by 1/32768."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            comptype = wf.getcomptype()
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        raise WavFormatError(f"{path}: malformed or unsupported WAV header ({exc})") from exc
    except EOFError as exc:
        raise WavFormatError(f"{path}: truncated WAV header") from exc
    if comptype != "NONE":
        raise WavFormatError(f"{path}: unsupported encoding {comptype!r}, expected PCM")
    if channels != 1:
        raise WavFormatError(f"{path}: unsupported channel count {channels}, expected mono")
    if width != 2:
        raise WavFormatError(f"{path}: unsupported encoding, {8 * width}-bit samples (need 16-bit PCM)")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return SignalBuffer(samples, rate)


def write_wav(path, signal: SignalBuffer) -> None:
    """Write a mono 16-bit PCM WAV, clipping to the representable range."""
    pcm = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(signal.sample_rate)
        wf.writeframes(pcm.tobytes())


def frame_signal(signal: SignalBuffer, spec: FrameSpec, n_frames: int | None = None) -> np.ndarray:
    """Slice ``signal`` into left-aligned frames of shape (n_frames, window).

    Without ``n_frames`` the count is ``(len - window) // hop + 1``, or a single
    zero-padded frame when the signal is shorter than one window. Passing
    ``n_frames`` zero-pads the tail as needed to produce exactly that many.
    """
    x = signal.samples
    if x.size == 0:
        raise ValueError("cannot frame an empty signal")
    win = spec.window_samples(signal.sample_rate)
    hop = spec.hop_samples(signal.sample_rate)
    if n_frames is None:
        n_frames = 1 if x.size < win else (x.size - win) // hop + 1
    needed = (n_frames - 1) * hop + win
    if x.size < needed:
        x = np.concatenate([x, np.zeros(needed - x.size)])
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    return x[idx]


def rms_energy(frame) -> float:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.size == 0:
        raise ValueError("empty frame")
    return float(np.sqrt(np.mean(frame * frame)))


def loudness(frame) -> float:
    """Narrow-band loudness approximation ``(E / I0) ** 0.3``."""
    frame = np.asarray(frame, dtype=np.float64)
    energy = float(np.mean(frame * frame))
    if energy == 0.0:
        return 0.0
    return (energy / LOUDNESS_I0) ** LOUDNESS_EXPONENT


def zero_crossing_rate(frame) -> float:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.size < 2:
        raise ValueError("zero-crossing rate needs at least 2 samples")
    positive = frame >= 0
    return float(np.count_nonzero(positive[1:] != positive[:-1]) / (frame.size - 1))


def _lag_range(sample_rate: int) -> tuple[int, int]:
    return int(np.ceil(sample_rate / F0_MAX_HZ)), int(np.floor(sample_rate / F0_MIN_HZ))


def _acf(frames: np.ndarray) -> np.ndarray:
    """Unbiased autocorrelation of each row, lags 0..n-1 (via FFT)."""
    n = frames.shape[-1]
    nfft = 1 << int(np.ceil(np.log2(2 * n - 1)))
    spec = np.fft.rfft(frames, nfft, axis=-1)
    r = np.fft.irfft(spec * np.conj(spec), nfft, axis=-1)[..., :n]
    return r / (n - np.arange(n))


def _pitch_analysis(frames: np.ndarray, sample_rate: int):
    """Return (best_lag, r0, r_best) per frame; best_lag is 0 for silent frames."""
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    lo, hi = _lag_range(sample_rate)
    if frames.shape[1] <= hi:
        raise ValueError(
            f"frame of {frames.shape[1]} samples is shorter than one {F0_MIN_HZ:g} Hz period"
        )
    r = _acf(frames)
    r0 = r[:, 0]
    band = r[:, lo : hi + 1]
    peak = band.max(axis=1)
    padded = np.pad(band, ((0, 0), (1, 1)), constant_values=-np.inf)
    local_max = (band >= padded[:, :-2]) & (band >= padded[:, 2:])
    # earliest local maximum within tolerance of the global peak
    near = local_max & (band >= (peak - OCTAVE_TOLERANCE * np.abs(peak))[:, None])
    best = lo + np.argmax(near, axis=1)
    r_best = r[np.arange(len(r)), best]
    silent = r0 <= 1e-20
    best = np.where(silent, 0, best)
    return best, r0, np.where(silent, 0.0, r_best)


def _voicing_columns(frames: np.ndarray, sample_rate: int):
    best, r0, r_best = _pitch_analysis(frames, sample_rate)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(r0 > 1e-20, r_best / r0, 0.0)
    voicing = np.clip(ratio, 0.0, 1.0)
    voiced = voicing >= VOICING_THRESHOLD
    f0 = np.where(voiced, sample_rate / np.maximum(best, 1), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        hnr_db = 10.0 * np.log10(r_best / (r0 - r_best))
    hnr_db = np.where(r_best >= r0, HNR_CEIL_DB, hnr_db)
    hnr_db = np.where(voiced, np.clip(np.nan_to_num(hnr_db, nan=HNR_FLOOR_DB), HNR_FLOOR_DB, HNR_CEIL_DB),
                      HNR_FLOOR_DB)
    return f0, voicing, hnr_db


def f0_and_voicing(frame, sample_rate: int) -> tuple[float, float]:
    """Autocorrelation pitch estimate over 50-500 Hz.

    Returns ``(f0_hz, voicing_prob)``; ``f0_hz`` is 0 when the normalized
    peak falls below the voicing threshold or the frame is silent.
    """
    f0, voicing, _ = _voicing_columns(frame, sample_rate)
    return float(f0[0]), float(voicing[0])


def hnr(frame, sample_rate: int) -> float:
    """Harmonics-to-noise ratio in dB from the ACF peak, clamped to [-100, 100]."""
    _, _, hnr_db = _voicing_columns(frame, sample_rate)
    return float(hnr_db[0])


def extract_lld_track(signal: SignalBuffer) -> FrameFeatureTrack:
    pitch_frames = frame_signal(signal, FrameSpec(PITCH_WINDOW_MS))
    n = pitch_frames.shape[0]
    intensity_frames = frame_signal(signal, FrameSpec(INTENSITY_WINDOW_MS), n_frames=n)

    energy = np.mean(intensity_frames * intensity_frames, axis=1)
    rms = np.sqrt(energy)
    loud = np.where(energy > 0, (energy / LOUDNESS_I0) ** LOUDNESS_EXPONENT, 0.0)

    f0, voicing, hnr_db = _voicing_columns(pitch_frames, signal.sample_rate)
    f0 = median_filter(f0, size=3, mode="nearest")

    positive = pitch_frames >= 0
    zcr = np.count_nonzero(positive[:, 1:] != positive[:, :-1], axis=1) / (pitch_frames.shape[1] - 1)

    frames = np.column_stack([rms, loud, f0, voicing, hnr_db, zcr])
    return FrameFeatureTrack(frames)


def write_track_csv(path, track: FrameFeatureTrack) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CSV_HEADER + "\n")
        for i, row in enumerate(track.frames):
            fh.write(f"{i}," + ",".join(f"{v:.6f}" for v in row) + "\n")


def read_track_csv(path) -> FrameFeatureTrack:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        return FrameFeatureTrack(np.zeros((0, 6)))
    return FrameFeatureTrack(data[:, 1:])
