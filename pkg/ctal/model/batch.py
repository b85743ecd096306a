import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ctal.errors import DimensionError
from ctal.text.bbpe import PAD_ID

logger = logging.getLogger(__name__)


@dataclass
class PairBatch:
    """
    A padded batch of (transcript, audio) pairs. Masks are True at real
    positions.
    """
    token_ids: np.ndarray
    text_mask: np.ndarray
    audio_features: np.ndarray
    audio_mask: np.ndarray
    utterance_ids: list = field(default_factory=list)
    labels: object = None

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        self.text_mask = np.asarray(self.text_mask, dtype=bool)
        self.audio_features = np.asarray(self.audio_features, dtype=np.float32)
        self.audio_mask = np.asarray(self.audio_mask, dtype=bool)
        if self.token_ids.shape != self.text_mask.shape:
            raise DimensionError(f"token ids {self.token_ids.shape} and text mask {self.text_mask.shape} differ")
        if self.audio_features.ndim != 3 or self.audio_features.shape[:2] != self.audio_mask.shape:
            raise DimensionError(f"audio features {self.audio_features.shape} do not match "
                                 f"audio mask {self.audio_mask.shape}")
        if self.token_ids.shape[0] != self.audio_features.shape[0]:
            raise DimensionError(f"{self.token_ids.shape[0]} transcripts but {self.audio_features.shape[0]} "
                                 f"utterances in one batch")

    @property
    def batch_size(self):
        return self.token_ids.shape[0]

    def select(self, indices):
        indices = list(indices)
        labels = None if self.labels is None else np.asarray(self.labels)[indices]
        ids = [self.utterance_ids[i] for i in indices] if self.utterance_ids else []
        return PairBatch(self.token_ids[indices], self.text_mask[indices], self.audio_features[indices],
                         self.audio_mask[indices], ids, labels)

    def truncated(self, max_text_len, max_audio_frames):
        """Cuts over-long sequences from the tail, logging a warning."""
        batch = self
        if batch.token_ids.shape[1] > max_text_len:
            logger.warning("Truncating text from %d to %d tokens", batch.token_ids.shape[1], max_text_len)
            batch = replace(batch, token_ids=batch.token_ids[:, :max_text_len],
                            text_mask=batch.text_mask[:, :max_text_len])
        if batch.audio_features.shape[1] > max_audio_frames:
            logger.warning("Truncating audio from %d to %d frames", batch.audio_features.shape[1], max_audio_frames)
            batch = replace(batch, audio_features=batch.audio_features[:, :max_audio_frames],
                            audio_mask=batch.audio_mask[:, :max_audio_frames])
        return batch


def collate(token_sequences, feature_arrays, utterance_ids=None, labels=None, feature_dim=160):
    """
    Pads token id lists with <pad> and feature matrices with zero rows.
    """
    if len(token_sequences) != len(feature_arrays):
        raise DimensionError(f"{len(token_sequences)} transcripts but {len(feature_arrays)} feature matrices")
    token_sequences = [list(getattr(ids, "ids", ids)) for ids in token_sequences]
    feature_arrays = [np.asarray(getattr(f, "frames", f)) for f in feature_arrays]
    batch = len(token_sequences)
    max_tokens = max((len(ids) for ids in token_sequences), default=0)
    max_frames = max((len(f) for f in feature_arrays), default=0)
    token_ids = np.full((batch, max_tokens), PAD_ID, dtype=np.int64)
    text_mask = np.zeros((batch, max_tokens), dtype=bool)
    features = np.zeros((batch, max_frames, feature_dim), dtype=np.float32)
    audio_mask = np.zeros((batch, max_frames), dtype=bool)
    for i, (ids, frames) in enumerate(zip(token_sequences, feature_arrays)):
        token_ids[i, :len(ids)] = ids
        text_mask[i, :len(ids)] = True
        features[i, :len(frames)] = frames
        audio_mask[i, :len(frames)] = True
    return PairBatch(token_ids, text_mask, features, audio_mask, list(utterance_ids or []), labels)
