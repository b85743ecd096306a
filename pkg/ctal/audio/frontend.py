"""
Frame-level surface features for the audio stream: 80 log-Mel energies per
50 ms frame (12.5 ms hop) followed by their 80 first-order deltas, normalised
per utterance over time.
"""
import functools
import logging
import math
from dataclasses import dataclass, field

import librosa
import numpy as np
from scipy import fft, signal

from ctal.errors import AudioTooShortError

logger = logging.getLogger(__name__)

N_MELS = 80
FEATURE_DIM = 2 * N_MELS
VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")
        if np.size(self.samples) == 0:
            raise AudioTooShortError("empty waveform")

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass
class FrontendConfig:
    sample_rate: int = 16000
    frame_width_ms: float = 50.0
    frame_step_ms: float = 12.5
    log_floor: float = 1e-10
    delta_window: int = 2
    normalize: bool = True

    def width_samples(self, sample_rate=None):
        return int(round((sample_rate or self.sample_rate) * self.frame_width_ms / 1000.0))

    def step_samples(self, sample_rate=None):
        return int(round((sample_rate or self.sample_rate) * self.frame_step_ms / 1000.0))


@dataclass
class AcousticFeatureSequence:
    """
    frames: T x 160, columns 0..79 log-Mel energies, 80..159 their deltas.
    """
    frames: np.ndarray
    frame_width_ms: float = 50.0
    frame_step_ms: float = 12.5
    sample_rate: int = 16000
    source: str = field(default="")

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[1] != FEATURE_DIM:
            raise ValueError(f"expected T x {FEATURE_DIM} features, got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise ValueError("a feature sequence needs at least one frame")

    @property
    def num_frames(self):
        return self.frames.shape[0]

    def frame_starts(self):
        """Start time of every frame in seconds."""
        return np.arange(self.num_frames) * self.frame_step_ms / 1000.0


def frame_signal(waveform, config=None):
    """
    Cuts the waveform into overlapping frames without padding.

    :return: array [T, width_samples]
    """
    config = config or FrontendConfig()
    width = config.width_samples(waveform.sample_rate)
    step = config.step_samples(waveform.sample_rate)
    samples = np.asarray(waveform.samples, dtype=np.float64)
    if len(samples) < width:
        raise AudioTooShortError(f"waveform lasts {1000.0 * waveform.duration:.2f} ms; at least "
                                 f"{config.frame_width_ms:g} ms ({width} samples at {waveform.sample_rate} Hz) "
                                 f"is needed for one frame")
    return np.lib.stride_tricks.sliding_window_view(samples, width)[::step]


def fft_size(width):
    return 1 << (int(width) - 1).bit_length()


@functools.lru_cache(maxsize=8)
def mel_filterbank(sample_rate, n_fft, n_mels=N_MELS):
    return librosa.filters.mel(sr=sample_rate, n_fft=n_fft, n_mels=n_mels, fmin=0.0,
                               fmax=sample_rate / 2.0).astype(np.float64)


def mel_features(frames, sample_rate=16000, log_floor=1e-10):
    """
    Log Mel filterbank energies of Hann-windowed frames.

    :param frames: [T, width]
    :return: [T, 80]
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ValueError(f"expected a non-empty [T, width] frame matrix, got {frames.shape}")
    width = frames.shape[1]
    n_fft = fft_size(width)
    window = signal.get_window("hann", width)
    power = np.abs(fft.rfft(frames * window, n=n_fft, axis=-1)) ** 2
    energies = power @ mel_filterbank(sample_rate, n_fft).T
    return np.log(np.maximum(energies, log_floor))


def append_deltas(mel, window=2):
    """
    Appends regression deltas over +-`window` frames, replicating the edge
    frames. A ramp of slope s has delta s.
    """
    mel = np.asarray(mel, dtype=np.float64)
    num_frames = mel.shape[0]
    padded = np.pad(mel, ((window, window), (0, 0)), mode="edge")
    delta = np.zeros_like(mel)
    for k in range(1, window + 1):
        delta += k * (padded[window + k:window + k + num_frames] - padded[window - k:window - k + num_frames])
    delta /= 2.0 * sum(k * k for k in range(1, window + 1))
    return np.concatenate([mel, delta], axis=1)


def normalize_utterance(features):
    """
    Mean/variance normalisation over time; bins that never vary become 0.
    """
    mean = features.mean(axis=0, keepdims=True)
    variance = features.var(axis=0, keepdims=True)
    constant = variance < VARIANCE_FLOOR
    std = np.sqrt(np.where(constant, 1.0, variance))
    return np.where(constant, 0.0, (features - mean) / std)


def resample(waveform, sample_rate):
    if waveform.sample_rate == sample_rate:
        return waveform
    g = math.gcd(int(sample_rate), int(waveform.sample_rate))
    up, down = int(sample_rate) // g, int(waveform.sample_rate) // g
    logger.debug("Resampling %d Hz -> %d Hz (up %d, down %d)", waveform.sample_rate, sample_rate, up, down)
    samples = signal.resample_poly(np.asarray(waveform.samples, dtype=np.float64), up, down)
    return Waveform(samples, sample_rate)


def extract(waveform, config=None, source=""):
    """
    Waveform -> AcousticFeatureSequence [T x 160], float32. Pure function of
    the samples, the sample rate and `config`.
    """
    config = config or FrontendConfig()
    waveform = resample(waveform, config.sample_rate)
    frames = frame_signal(waveform, config)
    features = append_deltas(mel_features(frames, config.sample_rate, config.log_floor), config.delta_window)
    if config.normalize:
        features = normalize_utterance(features)
    return AcousticFeatureSequence(features.astype(np.float32), config.frame_width_ms, config.frame_step_ms,
                                   config.sample_rate, source)
