import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

import librosa

from ctal.audio import (FEATURE_DIM, AcousticFeatureSequence, FrontendConfig, Waveform, append_deltas, extract,
                        frame_signal, mel_features, read_features, read_wav, write_features, write_wav)
from ctal.audio.cache import dumps_features, extract_to_cache, feature_path, loads_features
from ctal.errors import AudioTooShortError, FormatError

RATE = 16000


def _noise(seconds, seed=0, amplitude=0.1):
    rng = np.random.default_rng(seed)
    return Waveform(amplitude * rng.standard_normal(int(seconds * RATE)), RATE)


class TestFraming:
    def test_one_second(self):
        assert frame_signal(_noise(1.0)).shape == (77, 800)

    def test_exactly_one_frame(self):
        assert frame_signal(_noise(0.05)).shape == (1, 800)

    def test_too_short_names_minimum(self):
        with pytest.raises(AudioTooShortError, match="50 ms"):
            frame_signal(_noise(0.049))

    def test_frames_are_hops_of_the_signal(self):
        wave = _noise(0.2)
        frames = frame_signal(wave)
        assert_array_equal(frames[3], wave.samples[600:1400])


class TestMel:
    def test_silence_hits_the_floor(self):
        out = mel_features(np.zeros((3, 800)))
        assert_array_equal(out, np.full((3, 80), np.log(1e-10)))

    def test_tone_peaks_at_nearest_center(self):
        t = np.arange(RATE) / RATE
        frames = frame_signal(Waveform(0.5 * np.sin(2 * np.pi * 1000.0 * t), RATE))
        out = mel_features(frames)
        centers = librosa.mel_frequencies(n_mels=82, fmin=0.0, fmax=RATE / 2)[1:-1]
        expected = int(np.argmin(np.abs(centers - 1000.0)))
        assert np.all(out.argmax(axis=1) == expected)

    def test_doubling_amplitude_adds_two_log_two(self):
        wave = _noise(0.3, seed=1)
        base = mel_features(frame_signal(wave))
        doubled = mel_features(frame_signal(Waveform(2.0 * wave.samples, RATE)))
        assert_allclose(doubled - base, 2.0 * np.log(2.0), atol=1e-9)


class TestDeltas:
    def test_constant_input_has_zero_deltas(self):
        out = append_deltas(np.full((6, 80), 3.5))
        assert out.shape == (6, 160)
        assert_array_equal(out[:, 80:], 0.0)

    def test_single_frame_has_zero_deltas(self):
        assert_array_equal(append_deltas(np.ones((1, 80)))[:, 80:], 0.0)

    def test_ramp_gives_its_slope(self):
        slopes = np.linspace(-2.0, 2.0, 80)
        ramp = np.arange(10)[:, None] * slopes[None, :]
        deltas = append_deltas(ramp)[:, 80:]
        assert_allclose(deltas[2:-2], np.broadcast_to(slopes, (6, 80)), atol=1e-12)

    def test_matches_explicit_regression(self):
        rng = np.random.default_rng(2)
        mel = rng.normal(size=(7, 80))
        deltas = append_deltas(mel)[:, 80:]
        padded = np.concatenate([mel[:1], mel[:1], mel, mel[-1:], mel[-1:]])
        for t in range(7):
            expected = sum(k * (padded[t + 2 + k] - padded[t + 2 - k]) for k in (1, 2)) / 10.0
            assert_allclose(deltas[t], expected, atol=1e-12)


class TestExtract:
    def test_shape(self):
        features = extract(_noise(1.0))
        assert features.frames.shape == (77, FEATURE_DIM)
        assert features.frames.dtype == np.float32

    def test_silence_normalises_to_zero(self):
        features = extract(Waveform(np.zeros(RATE), RATE))
        assert_array_equal(features.frames, 0.0)

    def test_deterministic_bytes(self):
        wave = _noise(0.7, seed=3)
        assert extract(wave).frames.tobytes() == extract(wave).frames.tobytes()

    def test_finite_for_any_input(self):
        rng = np.random.default_rng(4)
        samples = np.concatenate([np.zeros(4000), rng.uniform(-1, 1, 4000), np.full(4000, 1.0)])
        assert np.all(np.isfinite(extract(Waveform(samples, RATE)).frames))

    def test_normalised_columns(self):
        frames = extract(_noise(2.0, seed=5)).frames.astype(np.float64)
        assert_allclose(frames.mean(axis=0), 0.0, atol=1e-5)
        assert_allclose(frames.std(axis=0), 1.0, atol=1e-4)

    def test_other_rates_are_resampled(self):
        rng = np.random.default_rng(6)
        wave = Waveform(0.1 * rng.standard_normal(8000), 8000)
        assert extract(wave).frames.shape == (77, FEATURE_DIM)

    def test_sequence_rejects_wrong_width(self):
        with pytest.raises(ValueError):
            AcousticFeatureSequence(np.zeros((3, 80), dtype=np.float32))


class TestFiles:
    def test_wav_round_trip(self, tmp_path):
        wave = _noise(0.25, seed=7)
        path = str(tmp_path / "a.wav")
        write_wav(path, wave)
        back = read_wav(path)
        assert back.sample_rate == RATE
        assert_allclose(back.samples, wave.samples, atol=1.0 / 32000)

    def test_stereo_is_averaged(self, tmp_path, caplog):
        from scipy.io import wavfile
        path = str(tmp_path / "stereo.wav")
        left = np.full(1000, 8000, dtype=np.int16)
        right = np.full(1000, -4000, dtype=np.int16)
        wavfile.write(path, RATE, np.stack([left, right], axis=1))
        wave = read_wav(path)
        assert_allclose(wave.samples, 2000.0 / 32768.0)
        assert "averaging to mono" in caplog.text

    def test_feature_cache_is_byte_exact(self, tmp_path):
        features = extract(_noise(0.5, seed=8))
        path = str(tmp_path / "u.ctalfeat")
        write_features(path, features)
        back = read_features(path)
        assert back.frames.tobytes() == features.frames.tobytes()
        assert dumps_features(back) == open(path, "rb").read()

    def test_cache_header(self):
        blob = dumps_features(AcousticFeatureSequence(np.ones((2, 160), dtype=np.float32)))
        assert blob[:8] == b"CTALFEAT"
        assert int.from_bytes(blob[8:10], "little") == 1
        assert int.from_bytes(blob[10:14], "little") == 2
        assert int.from_bytes(blob[14:18], "little") == 160
        assert len(blob) == 18 + 2 * 160 * 4

    @pytest.mark.parametrize("damage", [lambda b: b"XXXXXXXX" + b[8:], lambda b: b[:-4], lambda b: b[:10]])
    def test_damaged_cache_is_rejected(self, damage):
        blob = dumps_features(AcousticFeatureSequence(np.ones((2, 160), dtype=np.float32)))
        with pytest.raises(FormatError):
            loads_features(damage(blob))

    def test_extract_to_cache(self, tmp_path):
        paths = []
        for i in range(3):
            path = str(tmp_path / f"utt{i}.wav")
            write_wav(path, _noise(0.3, seed=i))
            paths.append(path)
        outputs = extract_to_cache(paths, str(tmp_path / "feats"), threads=2)
        assert outputs == [feature_path(str(tmp_path / "feats"), p) for p in paths]
        assert read_features(outputs[1]).frames.shape == (21, 160)

    def test_config_defaults(self):
        config = FrontendConfig()
        assert (config.width_samples(), config.step_samples()) == (800, 200)
