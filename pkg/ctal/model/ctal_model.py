import logging
from dataclasses import dataclass

import numpy as np

from ctal.model.layers import AudioEmbeddings, AudioEncoder, McamHead, MlmHead, TextEmbeddings, TextEncoder
from ctal.tensor.nn import Dropout, Module

logger = logging.getLogger(__name__)


@dataclass
class CtalOutput:
    text_hidden: object
    audio_hidden: object
    text_layers: list = None
    audio_layers: list = None


class CtalModel(Module):
    """
    The two-stream network: a text encoder over BBPE tokens and a
    text-referred audio encoder whose every layer cross-attends to the final
    text states.

    :param config: ModelConfig
    :param pretraining_heads: build the MLM and MCAM heads
    :param initialize: draw random weights; otherwise storage stays zero
    :param seed: seed of the initialisation generator and of the dropout masks
    """

    def __init__(self, config, pretraining_heads=True, initialize=True, seed=0):
        super(CtalModel, self).__init__()
        self.config = config
        self.text_embeddings = TextEmbeddings(config)
        self.text_encoder = TextEncoder(config)
        self.audio_embeddings = AudioEmbeddings(config)
        self.audio_encoder = AudioEncoder(config)
        if pretraining_heads:
            self.mlm_head = MlmHead(config)
            self.mcam_head = McamHead(config)
        if initialize:
            self.init_weights(np.random.default_rng(seed))
        self.seed_dropout(seed)

    def init_weights(self, rng):
        for module in self.modules():
            reset = getattr(module, "reset_parameters", None)
            if reset is not None:
                reset(rng, self.config.init_std)

    def seed_dropout(self, seed):
        """Gives every Dropout its own generator spawned from `seed`."""
        dropouts = [m for m in self.modules() if isinstance(m, Dropout)]
        for module, child in zip(dropouts, np.random.SeedSequence(seed).spawn(len(dropouts))):
            module.generator = np.random.default_rng(child)

    def embed_text(self, ids):
        return self.text_embeddings(ids)

    def embed_audio(self, features):
        return self.audio_embeddings(features)

    def encode_text(self, batch, output_hidden_states=False):
        """H_w^N for the batch; never reads the audio."""
        return self.text_encoder(self.embed_text(batch.token_ids), batch.text_mask, output_hidden_states)

    def forward(self, batch, output_hidden_states=False):
        batch = batch.truncated(self.config.max_text_len, self.config.max_audio_frames)
        text = self.encode_text(batch, output_hidden_states)
        text_hidden, text_layers = text if output_hidden_states else (text, None)
        audio = self.audio_encoder(self.embed_audio(batch.audio_features), text_hidden, batch.audio_mask,
                                   batch.text_mask, output_hidden_states)
        audio_hidden, audio_layers = audio if output_hidden_states else (audio, None)
        return CtalOutput(text_hidden, audio_hidden, text_layers, audio_layers)

    def mlm_logits(self, text_hidden):
        return self.mlm_head(text_hidden, self.text_embeddings.token.weight)

    def mcam_predictions(self, audio_hidden):
        return self.mcam_head(audio_hidden)
