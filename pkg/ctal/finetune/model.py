import logging

import numpy as np

from ctal.finetune.fusion import AttentionPooling, orthogonal_loss, pool_streams
from ctal.finetune.heads import TaskHead, finetune_loss
from ctal.model.ctal_model import CtalModel
from ctal.tensor import no_grad

logger = logging.getLogger(__name__)

PRETRAINED_ONLY = ("mlm_head.", "mcam_head.")
FINETUNE_ONLY = ("attention_pool.", "task_head.")


class CtalForFinetuning(CtalModel):
    """
    The encoder without the pre-training heads, plus audio attention pooling
    and one task head over h_fuse.

    :param config: ModelConfig
    :param variant: "classification", "regression" or "speaker"
    :param num_outputs: classes, speakers, or 1 for regression
    :param fusion: "full", "text_only" or "audio_only"
    """

    def __init__(self, config, variant, num_outputs, fusion="full", initialize=True, seed=0):
        super(CtalForFinetuning, self).__init__(config, pretraining_heads=False, initialize=False, seed=seed)
        self.fusion = fusion
        self.attention_pool = AttentionPooling(config.hidden_size)
        self.task_head = TaskHead(variant, 2 * config.hidden_size, num_outputs)
        if initialize:
            self.init_weights(np.random.default_rng(seed))

    def fuse(self, batch):
        batch = batch.truncated(self.config.max_text_len, self.config.max_audio_frames)
        output = super(CtalForFinetuning, self).forward(batch)
        return pool_streams(output.text_hidden, batch.text_mask, output.audio_hidden, batch.audio_mask,
                            self.attention_pool, self.fusion)

    def forward(self, batch):
        """Logits [B, C] or regression scores [B]."""
        return self.task_head(self.fuse(batch).h_fuse)

    def loss(self, batch, targets, orthogonal_weight=1.0):
        """
        :return: (total, task loss, prediction)
        """
        fused = self.fuse(batch)
        orth = None
        if self.fusion == "full" and orthogonal_weight:
            orth = orthogonal_loss(fused.h_attn_a, fused.h_attn_w, fused.h_max_a, fused.h_max_w)
        return finetune_loss(self.task_head, fused.h_fuse, targets, orth, orthogonal_weight)


def extract_identity_embedding(model, batch):
    """h_fuse for every pair of the batch, dropout off: [B, 2d] numpy."""
    training = model.training
    model.eval()
    try:
        with no_grad():
            return model.fuse(batch).h_fuse.numpy()
    finally:
        model.train(training)
