import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pitchaccent import dsp
from pitchaccent.dsp import FrameSpec, SignalBuffer, WavFormatError

SR = 16000


def sine(freq, seconds=1.0, amp=1.0, sr=SR, phase=0.0):
    t = np.arange(int(seconds * sr)) / sr
    return amp * np.sin(2 * np.pi * freq * t + phase)


def direct_acf(x, k):
    # unbiased lag-k autocorrelation by plain summation
    n = len(x)
    return sum(x[t] * x[t + k] for t in range(n - k)) / (n - k)


class TestLoadWav:
    def test_silence(self, wav_file):
        sig = dsp.load_wav(wav_file([0] * 160))
        assert sig.sample_rate == 16000
        assert np.array_equal(sig.samples, np.zeros(160))

    def test_scaling(self, wav_file):
        sig = dsp.load_wav(wav_file([0, 16384, -32768]))
        assert sig.samples.tolist() == [0.0, 0.5, -1.0]

    def test_rate_from_header(self, wav_file):
        assert dsp.load_wav(wav_file([1, 2], sample_rate=8000)).sample_rate == 8000

    def test_stereo_rejected(self, wav_file):
        with pytest.raises(WavFormatError, match="unsupported channel count"):
            dsp.load_wav(wav_file([0, 0, 0, 0], channels=2))

    def test_8bit_rejected(self, wav_file):
        with pytest.raises(WavFormatError, match="unsupported encoding"):
            dsp.load_wav(wav_file([128, 128], bits=8))

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"RIFX0000garbage")
        with pytest.raises(WavFormatError):
            dsp.load_wav(path)

    def test_non_pcm_rejected(self, wav_file):
        with pytest.raises(WavFormatError):
            dsp.load_wav(wav_file([0, 0], fmt_tag=3))

    def test_write_read_roundtrip(self, tmp_path, rng):
        x = np.round(rng.uniform(-1, 1, 500) * 32767) / 32768
        dsp.write_wav(tmp_path / "r.wav", SignalBuffer(x, 22050))
        back = dsp.load_wav(tmp_path / "r.wav")
        assert back.sample_rate == 22050
        assert np.array_equal(back.samples, x)


class TestFraming:
    def test_exact_fit(self):
        frames = dsp.frame_signal(SignalBuffer(np.ones(800), SR), FrameSpec(50))
        assert frames.shape == (1, 800)

    def test_count(self):
        frames = dsp.frame_signal(SignalBuffer(np.arange(1600.0), SR), FrameSpec(50))
        assert frames.shape == (6, 800)
        assert frames[5, 0] == 5 * 160

    def test_short_input_padded(self):
        frames = dsp.frame_signal(SignalBuffer(np.ones(100), SR), FrameSpec(50))
        assert frames.shape == (1, 800)
        assert np.all(frames[0, 100:] == 0) and np.all(frames[0, :100] == 1)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            dsp.frame_signal(SignalBuffer(np.zeros(0), SR), FrameSpec(20))

    def test_frame_spec_validation(self):
        with pytest.raises(ValueError):
            FrameSpec(30)
        with pytest.raises(ValueError):
            FrameSpec(20, hop_ms=5)


class TestDescriptors:
    def test_rms(self):
        assert dsp.rms_energy(np.zeros(320)) == 0.0
        assert dsp.rms_energy(np.full(320, 0.5)) == pytest.approx(0.5)
        x = sine(200, 0.05)  # ten full periods
        oracle = np.sqrt(sum(v * v for v in x) / len(x))
        assert dsp.rms_energy(x) == pytest.approx(oracle, rel=1e-12)
        assert dsp.rms_energy(x) == pytest.approx(1 / np.sqrt(2), abs=1e-3)

    def test_loudness(self):
        assert dsp.loudness(np.zeros(320)) == 0.0
        assert dsp.loudness(np.full(320, 1e-3)) == pytest.approx(1.0)
        assert dsp.loudness(sine(200, 0.05)) == pytest.approx((0.5 / 1e-6) ** 0.3, abs=0.5)
        assert dsp.loudness(sine(200, 0.05)) == pytest.approx(51.25, abs=0.5)

    def test_zcr_trivial(self):
        assert dsp.zero_crossing_rate(np.full(50, 0.3)) == 0.0
        assert dsp.zero_crossing_rate(np.tile([1.0, -1.0], 25)) == 1.0
        assert dsp.zero_crossing_rate(np.zeros(10)) == 0.0

    def test_zcr_sine_against_counting_loop(self):
        frame = sine(440, 0.05)
        count = 0
        for a, b in zip(frame[:-1], frame[1:]):
            if (a >= 0) != (b >= 0):
                count += 1
        assert dsp.zero_crossing_rate(frame) == pytest.approx(count / 799, abs=1e-15)
        assert dsp.zero_crossing_rate(frame) == pytest.approx(44 / 799, abs=0.002)

    def test_f0_silence(self):
        assert dsp.f0_and_voicing(np.zeros(800), SR) == (0.0, 0.0)

    def test_f0_sine(self):
        f0, voicing = dsp.f0_and_voicing(sine(220, 0.05), SR)
        assert abs(f0 - 220) <= 5
        assert voicing > 0.9

    @pytest.mark.parametrize("freq", [60, 95, 130, 180, 220, 310, 440])
    def test_f0_range(self, freq):
        f0, voicing = dsp.f0_and_voicing(sine(freq, 0.05, phase=0.3), SR)
        assert abs(f0 - freq) <= 0.03 * freq
        assert voicing > 0.9

    def test_white_noise_unvoiced(self):
        noise = np.random.default_rng(7).standard_normal(SR)
        frames = dsp.frame_signal(SignalBuffer(noise, SR), FrameSpec(50))
        voicing = np.array([dsp.f0_and_voicing(f, SR)[1] for f in frames])
        assert np.mean(voicing < 0.5) >= 0.9
        # regression value recorded from this seeded run
        assert voicing.max() == pytest.approx(0.150894, abs=1e-6)

    def test_short_frame_rejected(self):
        with pytest.raises(ValueError):
            dsp.f0_and_voicing(np.ones(100), SR)

    def test_hnr(self):
        assert dsp.hnr(np.zeros(800), SR) == -100.0
        assert dsp.hnr(sine(220, 0.05), SR) >= 20.0
        noise = np.random.default_rng(3).standard_normal(800)
        assert dsp.hnr(noise, SR) <= 5.0

    def test_hnr_matches_direct_acf(self):
        # a voiced but noisy frame, where the clamp is inactive
        x = sine(200, 0.05) + 0.3 * np.random.default_rng(4).standard_normal(800)
        r0, r80 = direct_acf(x, 0), direct_acf(x, 80)
        f0, voicing = dsp.f0_and_voicing(x, SR)
        assert f0 == pytest.approx(200.0)
        assert voicing == pytest.approx(r80 / r0, rel=1e-9)
        assert dsp.hnr(x, SR) == pytest.approx(10 * np.log10(r80 / (r0 - r80)), rel=1e-9)


class TestTrack:
    def test_silence(self):
        track = dsp.extract_lld_track(SignalBuffer(np.zeros(SR), SR))
        assert len(track) == 96
        expected = np.tile([0, 0, 0, 0, -100, 0], (96, 1))
        assert np.array_equal(track.frames, expected)

    def test_sine_f0_interior(self):
        track = dsp.extract_lld_track(SignalBuffer(sine(220), SR))
        f0 = track.column("f0_smoothed")
        assert np.all(np.abs(f0[1:-1] - 220) <= 5)

    def test_empty(self):
        with pytest.raises(ValueError):
            dsp.extract_lld_track(SignalBuffer(np.zeros(0), SR))

    def test_short_signal_single_frame(self):
        track = dsp.extract_lld_track(SignalBuffer(sine(200, 0.01), SR))
        assert len(track) == 1

    def test_intensity_uses_20ms_window(self):
        # energy only in samples 320..799: invisible to the first 20 ms window
        x = np.zeros(1600)
        x[320:800] = 0.5
        track = dsp.extract_lld_track(SignalBuffer(x, SR))
        assert track.frames[0, 0] == 0.0
        assert track.frames[2, 0] == pytest.approx(0.5)

    def test_csv_roundtrip(self, tmp_path):
        track = dsp.extract_lld_track(SignalBuffer(sine(150, 0.3, amp=0.4), SR))
        dsp.write_track_csv(tmp_path / "t.csv", track)
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "frame_idx,rms_energy,loudness,f0,voicing,hnr,zcr"
        assert lines[1].split(",")[1] == f"{track.frames[0, 0]:.6f}"
        back = dsp.read_track_csv(tmp_path / "t.csv")
        assert np.allclose(back.frames, track.frames, atol=5e-7)


signals = st.integers(min_value=0, max_value=2**31 - 1).map(
    lambda seed: np.random.default_rng(seed))


def random_speechlike(rng, n):
    freq = rng.uniform(80, 300)
    t = np.arange(n) / SR
    x = rng.uniform(0.1, 0.9) * np.sin(2 * np.pi * freq * t) + rng.uniform(0, 0.3) * rng.standard_normal(n)
    return np.clip(x, -1, 1)


class TestProperties:
    @settings(max_examples=25, deadline=None)
    @given(signals, st.integers(min_value=100, max_value=8000))
    def test_alignment_and_range(self, rng, n):
        track = dsp.extract_lld_track(SignalBuffer(random_speechlike(rng, n), SR))
        assert track.frames.shape[1] == 6
        expected = 1 if n < 800 else (n - 800) // 160 + 1
        assert len(track) == expected
        track.check_ranges()

    @settings(max_examples=15, deadline=None)
    @given(signals, st.floats(min_value=0.05, max_value=0.95))
    def test_scale_covariance(self, rng, c):
        x = random_speechlike(rng, 4000)
        base = dsp.extract_lld_track(SignalBuffer(x, SR)).frames
        scaled = dsp.extract_lld_track(SignalBuffer(c * x, SR)).frames
        for col in (2, 3, 4, 5):
            assert np.allclose(base[:, col], scaled[:, col], atol=1e-9, rtol=0)
        assert np.allclose(c * base[:, 0], scaled[:, 0], atol=1e-12, rtol=1e-9)

    @settings(max_examples=10, deadline=None)
    @given(signals)
    def test_shift_by_one_hop(self, rng):
        x = random_speechlike(rng, 6000)
        base = dsp.extract_lld_track(SignalBuffer(x, SR)).frames
        shifted = dsp.extract_lld_track(SignalBuffer(np.concatenate([np.zeros(160), x]), SR)).frames
        assert np.allclose(shifted[2:-1], base[1:-1], atol=1e-9, rtol=0)

    def test_determinism(self, rng):
        x = random_speechlike(rng, 5000)
        a = dsp.extract_lld_track(SignalBuffer(x, SR)).frames
        b = dsp.extract_lld_track(SignalBuffer(x.copy(), SR)).frames
        assert a.tobytes() == b.tobytes()
