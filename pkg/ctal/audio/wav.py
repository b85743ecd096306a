import logging

import numpy as np
from scipy.io import wavfile

from ctal.audio.frontend import Waveform, resample
from ctal.errors import FormatError

logger = logging.getLogger(__name__)

_INTEGER_SCALE = {
    np.dtype(np.int16): 32768.0,
    np.dtype(np.int32): 2147483648.0,
}


def read_wav(path, sample_rate=None):
    """
    Reads a PCM WAV file as a mono Waveform in [-1, 1], resampled to
    `sample_rate` when given.
    """
    try:
        rate, data = wavfile.read(path)
    except ValueError as e:
        raise FormatError(f"{path}: not a readable WAV file ({e})") from e

    if data.dtype in _INTEGER_SCALE:
        samples = data.astype(np.float64) / _INTEGER_SCALE[data.dtype]
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported sample type {data.dtype}")

    if samples.ndim == 2:
        logger.warning("%s has %d channels, averaging to mono", path, samples.shape[1])
        samples = samples.mean(axis=1)
    waveform = Waveform(samples, int(rate))
    if sample_rate is not None:
        waveform = resample(waveform, sample_rate)
    return waveform


def write_wav(path, waveform):
    """Writes 16-bit mono PCM."""
    clipped = np.clip(np.asarray(waveform.samples, dtype=np.float64), -1.0, 1.0)
    wavfile.write(path, int(waveform.sample_rate), np.round(clipped * 32767.0).astype(np.int16))
