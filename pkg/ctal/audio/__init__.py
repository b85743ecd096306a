from ctal.audio.frontend import (FEATURE_DIM, AcousticFeatureSequence, FrontendConfig, Waveform, append_deltas,
                                 extract, frame_signal, mel_features)
from ctal.audio.wav import read_wav, write_wav
from ctal.audio.cache import extract_to_cache, load_or_extract, read_features, write_features
