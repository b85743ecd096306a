"""
Embedding layers and the two encoder stacks. Every sublayer is post-norm:
LayerNorm(sublayer(x) + x).
"""
import logging

import numpy as np

from ctal.model.attention import MultiHeadAttention
from ctal.tensor import functional as F
from ctal.tensor import get_default_dtype
from ctal.tensor.nn import Dropout, Embedding, LayerNorm, Linear, Module, ModuleList, Parameter
from ctal.tensor.tensor import Tensor

logger = logging.getLogger(__name__)


def _truncate(array, limit, what):
    if array.shape[1] > limit:
        logger.warning("Truncating %s from %d to %d positions", what, array.shape[1], limit)
        return array[:, :limit]
    return array


class TextEmbeddings(Module):
    def __init__(self, config):
        super(TextEmbeddings, self).__init__()
        self.max_length = config.max_text_len
        self.token = Embedding(config.vocab_size, config.hidden_size)
        self.position = Embedding(config.max_text_len, config.hidden_size)
        self.dropout = Dropout(config.dropout)

    def forward(self, ids):
        """[B, T] ids -> [B, T, H]"""
        ids = _truncate(np.asarray(ids), self.max_length, "text")
        positions = np.arange(ids.shape[1])[None, :]
        return self.dropout(self.token(ids) + self.position(positions))


class AudioEmbeddings(Module):
    def __init__(self, config):
        super(AudioEmbeddings, self).__init__()
        self.max_length = config.max_audio_frames
        self.projection = Linear(config.audio_feature_dim, config.hidden_size)
        self.position = Embedding(config.max_audio_frames, config.hidden_size)
        self.dropout = Dropout(config.dropout)

    def forward(self, features):
        """[B, T, 160] features -> [B, T, H]"""
        features = _truncate(np.asarray(features), self.max_length, "audio")
        positions = np.arange(features.shape[1])[None, :]
        features = Tensor(features, dtype=self.projection.weight.dtype)
        return self.dropout(self.projection(features) + self.position(positions))


class FeedForward(Module):
    def __init__(self, config):
        super(FeedForward, self).__init__()
        self.dense_in = Linear(config.hidden_size, config.intermediate_size)
        self.dense_out = Linear(config.intermediate_size, config.hidden_size)

    def forward(self, x):
        return self.dense_out(F.gelu(self.dense_in(x)))


class TextLayer(Module):
    """
    H~ = LN(MultiHead(H, H, H) + H);  H' = LN(FFN(H~) + H~)
    """

    def __init__(self, config):
        super(TextLayer, self).__init__()
        self.self_attention = MultiHeadAttention(config.hidden_size, config.num_heads)
        self.attention_norm = LayerNorm(config.hidden_size, config.layer_norm_eps)
        self.feed_forward = FeedForward(config)
        self.output_norm = LayerNorm(config.hidden_size, config.layer_norm_eps)
        self.dropout = Dropout(config.dropout)

    def forward(self, hidden, mask):
        hidden = self.attention_norm(self.dropout(self.self_attention(hidden, hidden, mask)) + hidden)
        return self.output_norm(self.dropout(self.feed_forward(hidden)) + hidden)


class AudioLayer(Module):
    """
    Bidirectional self-attention over frames, cross-attention into the final
    text states, then the feed-forward block.
    """

    def __init__(self, config):
        super(AudioLayer, self).__init__()
        self.self_attention = MultiHeadAttention(config.hidden_size, config.num_heads)
        self.self_attention_norm = LayerNorm(config.hidden_size, config.layer_norm_eps)
        self.cross_attention = MultiHeadAttention(config.hidden_size, config.num_heads)
        self.cross_attention_norm = LayerNorm(config.hidden_size, config.layer_norm_eps)
        self.feed_forward = FeedForward(config)
        self.output_norm = LayerNorm(config.hidden_size, config.layer_norm_eps)
        self.dropout = Dropout(config.dropout)

    def forward(self, hidden, text_hidden, audio_mask, text_mask):
        hidden = self.self_attention_norm(self.dropout(self.self_attention(hidden, hidden, audio_mask)) + hidden)
        hidden = self.cross_attention_norm(
            self.dropout(self.cross_attention(hidden, text_hidden, text_mask)) + hidden)
        return self.output_norm(self.dropout(self.feed_forward(hidden)) + hidden)


class TextEncoder(Module):
    def __init__(self, config):
        super(TextEncoder, self).__init__()
        self.layers = ModuleList(TextLayer(config) for _ in range(config.num_layers))

    def forward(self, hidden, mask, output_hidden_states=False):
        states = [hidden]
        for layer in self.layers:
            hidden = layer(hidden, mask)
            states.append(hidden)
        return (hidden, states) if output_hidden_states else hidden


class AudioEncoder(Module):
    def __init__(self, config):
        super(AudioEncoder, self).__init__()
        self.layers = ModuleList(AudioLayer(config) for _ in range(config.num_layers))

    def forward(self, hidden, text_hidden, audio_mask, text_mask, output_hidden_states=False):
        """
        Every layer attends to the same final text representation.
        """
        states = [hidden]
        for layer in self.layers:
            hidden = layer(hidden, text_hidden, audio_mask, text_mask)
            states.append(hidden)
        return (hidden, states) if output_hidden_states else hidden


class MlmHead(Module):
    """
    dense H->H, GELU, LayerNorm, then projection to the vocabulary. With a
    tied head the projection reuses the token embedding table.
    """

    def __init__(self, config):
        super(MlmHead, self).__init__()
        self.tied = config.tie_mlm_head
        self.dense = Linear(config.hidden_size, config.hidden_size)
        self.norm = LayerNorm(config.hidden_size, config.layer_norm_eps)
        if self.tied:
            self.decoder = None
            self.decoder_bias = Parameter(np.zeros(config.vocab_size, dtype=get_default_dtype()))
        else:
            self.decoder = Linear(config.hidden_size, config.vocab_size)

    def forward(self, hidden, token_embedding=None):
        hidden = self.norm(F.gelu(self.dense(hidden)))
        if self.tied:
            return hidden @ token_embedding.transpose(1, 0) + self.decoder_bias
        return self.decoder(hidden)


class McamHead(Module):
    def __init__(self, config):
        super(McamHead, self).__init__()
        self.projection = Linear(config.hidden_size, config.audio_feature_dim)

    def forward(self, hidden):
        return self.projection(hidden)
