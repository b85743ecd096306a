"""
Small fixtures shared by the test modules: a toy model configuration and
random padded batches.
"""
import numpy as np

from ctal.model.batch import collate
from ctal.model.config import ModelConfig
from ctal.text.bbpe import BOS_ID, EOS_ID


def toy_config(**overrides):
    values = dict(num_layers=2, num_heads=2, hidden_size=8, intermediate_size=16, vocab_size=300,
                  max_text_len=32, max_audio_frames=64, dropout=0.0)
    values.update(overrides)
    return ModelConfig(**values)


def random_token_ids(rng, length, vocab_size):
    """A raw encoding of `length` tokens: <s>, length - 2 ordinary ids, </s>."""
    return [BOS_ID] + list(rng.integers(4, vocab_size, size=length - 2)) + [EOS_ID]


def random_batch(rng, config, text_lengths=(6, 4), frame_lengths=(12, 9), labels=None):
    tokens = [random_token_ids(rng, n, config.vocab_size) for n in text_lengths]
    features = [rng.normal(size=(n, config.audio_feature_dim)).astype(np.float32) for n in frame_lengths]
    ids = [f"utt{i}" for i in range(len(tokens))]
    return collate(tokens, features, ids, labels, config.audio_feature_dim)
