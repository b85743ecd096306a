"""
The pre-training objective: token cross-entropy on the text stream plus L1
reconstruction of masked frames on the audio stream, summed with unit
weights.
"""
from dataclasses import dataclass

import numpy as np

from ctal.errors import ConfigError
from ctal.pretrain.masking import IGNORE_INDEX
from ctal.tensor import functional as F
from ctal.tensor.tensor import Tensor


@dataclass
class PretrainLosses:
    total: Tensor
    mlm: Tensor
    mcam: Tensor

    def values(self):
        return float(self.total.item()), float(self.mlm.item()), float(self.mcam.item())


def mlm_loss(logits, labels, normalizer=None):
    """Mean cross-entropy over labelled positions; exactly 0 if there are none."""
    return F.cross_entropy(logits, labels, ignore_index=IGNORE_INDEX, normalizer=normalizer)


def mcam_loss(predictions, original_features, masked, normalizer=None):
    """Mean absolute error over masked frames times feature width."""
    return F.l1_masked(predictions, original_features, masked, normalizer=normalizer)


def _zero(like):
    return Tensor(np.zeros((), dtype=like.dtype))


def pretraining_losses(model, batch, targets, use_mlm=True, use_mcam=True, normalizers=None):
    """
    Runs the model on a corrupted batch and returns PretrainLosses.

    :param normalizers: (labelled tokens, masked frames * feature width) for
        the whole step, so that loss shards add up to the full-batch loss
    """
    if not (use_mlm or use_mcam):
        raise ConfigError("at least one of use_mlm and use_mcam must be on")
    mlm_norm, mcam_norm = normalizers if normalizers is not None else (None, None)
    output = model(batch)
    if use_mlm:
        mlm = mlm_loss(model.mlm_logits(output.text_hidden), targets.mlm_labels[:, :output.text_hidden.shape[1]],
                       mlm_norm)
    else:
        mlm = _zero(output.text_hidden)
    if use_mcam:
        frames = output.audio_hidden.shape[1]
        mcam = mcam_loss(model.mcam_predictions(output.audio_hidden), targets.original_features[:, :frames],
                         targets.mcam_mask[:, :frames], mcam_norm)
    else:
        mcam = _zero(output.audio_hidden)
    return PretrainLosses(mlm + mcam, mlm, mcam)


def step_normalizers(targets, feature_dim):
    """Global loss denominators for one optimizer step; None when nothing is labelled."""
    tokens = targets.num_labelled_tokens
    frames = targets.num_masked_frames
    return (tokens or None), (frames * feature_dim or None)
