"""
Pooling of the two final streams into one joint vector, and the
orthogonality regulariser on the pooled vectors.

    h_fuse = (h_attn_a + h_attn_w) ⊕ (h_max_a + h_max_w)

h_attn_w is the final state of <s>; h_attn_a is attention pooling over the
audio frames; h_max_* are per-dimension maxima over real positions.
"""
import logging
from dataclasses import dataclass

import numpy as np

from ctal.errors import ConfigError, DimensionError
from ctal.tensor import concat, where
from ctal.tensor import functional as F
from ctal.tensor.nn import Linear, Module, Parameter, _zeros
from ctal.tensor.tensor import as_tensor

logger = logging.getLogger(__name__)

FUSION_MODES = ("full", "text_only", "audio_only")


class AttentionPooling(Module):
    """
    Softmax(v . tanh(W H^T)) H over the unmasked positions.
    """

    def __init__(self, hidden_size):
        super(AttentionPooling, self).__init__()
        self.weight = Linear(hidden_size, hidden_size, bias=False)
        self.vector = Parameter(_zeros(hidden_size))
        self.last_weights = None

    def reset_parameters(self, rng, std):
        self.vector.data = rng.normal(0.0, std, self.vector.shape).astype(self.vector.dtype)

    def forward(self, hidden, mask):
        """
        :param hidden: [B, L, d]
        :param mask: [B, L] bool
        :return: [B, d]
        """
        batch, length, width = hidden.shape
        scores = (self.weight(hidden).tanh() @ self.vector.reshape(width, 1)).reshape(batch, length)
        weights = F.softmax(scores, mask=mask, axis=-1)
        self.last_weights = weights.data
        return (weights.reshape(batch, length, 1) * hidden).sum(axis=1)


def max_pool(hidden, mask):
    """[B, L, d] -> [B, d], maxima over rows where `mask` is True."""
    return F.masked_max(hidden, np.asarray(mask, dtype=bool)[..., None], axis=1)


@dataclass
class FusedRepresentation:
    h_attn_a: object
    h_max_a: object
    h_attn_w: object
    h_max_w: object
    h_fuse: object


def fuse(h_attn_a, h_attn_w, h_max_a, h_max_w):
    parts = [as_tensor(v) for v in (h_attn_a, h_attn_w, h_max_a, h_max_w)]
    shapes = {p.shape for p in parts}
    if len(shapes) != 1:
        raise DimensionError(f"fuse: pooled vectors disagree in shape: {sorted(shapes)}")
    return concat([parts[0] + parts[1], parts[2] + parts[3]], axis=-1)


def pool_streams(text_hidden, text_mask, audio_hidden, audio_mask, attention_pool, mode="full"):
    """
    :param attention_pool: AttentionPooling for the audio stream
    :return: FusedRepresentation; single-stream modes keep the 2d layout as
        h_attn ⊕ h_max of the one stream
    """
    if mode not in FUSION_MODES:
        raise ConfigError(f"fusion mode must be one of {FUSION_MODES}, got {mode!r}")
    h_attn_w = text_hidden[:, 0]
    h_max_w = max_pool(text_hidden, text_mask)
    h_attn_a = attention_pool(audio_hidden, audio_mask)
    h_max_a = max_pool(audio_hidden, audio_mask)
    if mode == "full":
        h_fuse = fuse(h_attn_a, h_attn_w, h_max_a, h_max_w)
    elif mode == "text_only":
        h_fuse = concat([h_attn_w, h_max_w], axis=-1)
    else:
        h_fuse = concat([h_attn_a, h_max_a], axis=-1)
    return FusedRepresentation(h_attn_a, h_max_a, h_attn_w, h_max_w, h_fuse)


def _abs_cosine(a, b):
    a, b = as_tensor(a), as_tensor(b)
    squared_a = (a * a).sum(axis=-1)
    squared_b = (b * b).sum(axis=-1)
    ok = (squared_a.data > 0.0) & (squared_b.data > 0.0)
    if not np.all(ok):
        logger.warning("Orthogonality term skipped for %d zero-norm pair(s)", int(np.size(ok) - np.sum(ok)))
    norms = where(ok, squared_a, 1.0).sqrt() * where(ok, squared_b, 1.0).sqrt()
    return where(ok, (a * b).sum(axis=-1).abs() / norms, 0.0)


def orthogonal_loss(h_attn_a, h_attn_w, h_max_a, h_max_w):
    """
    |cos(h_attn_a, h_attn_w)| + |cos(h_max_a, h_max_w)|, averaged over the
    batch for [B, d] inputs. A pair with a zero vector contributes 0.
    """
    per_example = _abs_cosine(h_attn_a, h_attn_w) + _abs_cosine(h_max_a, h_max_w)
    return per_example.mean() if per_example.ndim else per_example
