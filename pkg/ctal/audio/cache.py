"""
Per-utterance feature cache so pre-training never recomputes features.

Layout: magic "CTALFEAT", version u16, frame count u32, feature dim u32,
then the frames as row-major little-endian float32.
"""
import logging
import os
import struct
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from tqdm import tqdm

from ctal.audio.frontend import AcousticFeatureSequence, FrontendConfig, extract
from ctal.audio.wav import read_wav
from ctal.errors import FormatError

logger = logging.getLogger(__name__)

MAGIC = b"CTALFEAT"
VERSION = 1
SUFFIX = ".ctalfeat"
HEADER = struct.Struct("<8sHII")


def utterance_id(audio_path):
    return os.path.splitext(os.path.basename(audio_path))[0]


def feature_path(feature_dir, audio_path):
    return os.path.join(feature_dir, utterance_id(audio_path) + SUFFIX)


def dumps_features(features):
    frames = np.ascontiguousarray(features.frames, dtype="<f4")
    return HEADER.pack(MAGIC, VERSION, frames.shape[0], frames.shape[1]) + frames.tobytes()


def loads_features(blob, source=""):
    if len(blob) < HEADER.size:
        raise FormatError(f"{source or 'feature cache'}: truncated header")
    magic, version, num_frames, dim = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{source or 'feature cache'}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{source or 'feature cache'}: unsupported version {version}")
    expected = num_frames * dim * 4
    payload = blob[HEADER.size:]
    if len(payload) != expected:
        raise FormatError(f"{source or 'feature cache'}: payload holds {len(payload)} bytes, expected {expected}")
    frames = np.frombuffer(payload, dtype="<f4").reshape(num_frames, dim).astype(np.float32)
    return AcousticFeatureSequence(frames, source=source)


def write_features(path, features):
    with open(path, "wb") as f:
        f.write(dumps_features(features))


def read_features(path):
    with open(path, "rb") as f:
        return loads_features(f.read(), source=path)


def load_or_extract(audio_path, feature_dir=None, config=None):
    """
    Features for `audio_path`, from the cache when a file exists there.
    """
    if feature_dir is not None:
        cached = feature_path(feature_dir, audio_path)
        if os.path.exists(cached):
            return read_features(cached)
    config = config or FrontendConfig()
    return extract(read_wav(audio_path, config.sample_rate), config, source=audio_path)


def extract_to_cache(audio_paths, feature_dir, config=None, threads=1, overwrite=False):
    """
    Extracts and caches features for every path, in parallel over
    utterances.

    :return: list of cache file paths, aligned with `audio_paths`
    """
    config = config or FrontendConfig()
    os.makedirs(feature_dir, exist_ok=True)

    def work(audio_path):
        out = feature_path(feature_dir, audio_path)
        if overwrite or not os.path.exists(out):
            write_features(out, extract(read_wav(audio_path, config.sample_rate), config, source=audio_path))
        return out

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        outputs = list(tqdm(pool.map(work, audio_paths), total=len(audio_paths), desc="features", disable=None))
    logger.info("Cached features for %d utterances in %s", len(outputs), feature_dir)
    return outputs
