"""
Neural-network primitives built on the tensor engine. Each one has a fused
backward rule.
"""
import math

import numpy as np
from scipy.special import erf

from ctal.errors import DegenerateAttentionError, DimensionError
from ctal.tensor.tensor import Tensor, _result, as_tensor, unbroadcast


def softmax(x, mask=None, axis=-1):
    """
    Softmax along `axis`. Where `mask` is False the output is exactly 0; a
    slice with no True entry is a degenerate attention row.
    """
    x = as_tensor(x)
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not np.all(mask.any(axis=axis)):
            raise DegenerateAttentionError("softmax over a fully masked row")
        logits = np.where(mask, x.data, -np.inf)
    else:
        logits = x.data
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _result(out, (x,), "softmax", backward)


def layer_norm(x, gamma, beta, eps=1e-5):
    x = as_tensor(x)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: last axis {d} does not match gamma {gamma.shape} / beta {beta.shape}")
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    variance = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(variance + eps)
    normed = centered * inv_std
    out = normed * gamma.data + beta.data

    def backward(g):
        g_normed = g * gamma.data
        g_x = inv_std * (g_normed
                         - g_normed.mean(axis=-1, keepdims=True)
                         - normed * (g_normed * normed).mean(axis=-1, keepdims=True))
        return g_x, unbroadcast(g * normed, gamma.shape), unbroadcast(g, beta.shape)
    return _result(out, (x, gamma, beta), "layer_norm", backward)


def gelu(x):
    """
    Exact GELU, x * Phi(x).
    """
    cdf = 0.5 * (1.0 + erf(x.data / math.sqrt(2.0)))
    out = x.data * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) / math.sqrt(2.0 * math.pi)
        return (g * (cdf + x.data * pdf),)
    return _result(out.astype(x.dtype, copy=False), (x,), "gelu", backward)


def dropout(x, p, rng, training=True):
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _result(x.data * keep, (x,), "dropout", lambda g: (g * keep,))


def masked_max(x, mask, axis):
    """
    Max over `axis` restricted to positions where `mask` is True. The
    gradient goes to the first maximising position.
    """
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not np.all(mask.any(axis=axis)):
        raise DegenerateAttentionError("max pooling over a fully masked sequence")
    filled = np.where(mask, x.data, -np.inf)
    index = np.expand_dims(np.argmax(filled, axis=axis), axis)
    out = np.take_along_axis(x.data, index, axis=axis).squeeze(axis)

    def backward(g):
        grad = np.zeros_like(x.data)
        np.put_along_axis(grad, index, np.expand_dims(g, axis), axis=axis)
        return (grad,)
    return _result(out, (x,), "masked_max", backward)


def cross_entropy(logits, targets, ignore_index=-100, normalizer=None):
    """
    Summed negative log-likelihood of `targets` over positions whose target is
    not `ignore_index`, divided by `normalizer` (default: the number of such
    positions). Returns an exact zero when nothing is labelled.

    :param logits: [..., V]
    :param targets: integer array matching logits.shape[:-1]
    """
    targets = np.asarray(targets)
    vocab = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise DimensionError(f"cross_entropy: targets {targets.shape} do not match logits {logits.shape}")
    flat = logits.data.reshape(-1, vocab)
    flat_targets = targets.reshape(-1)
    valid = flat_targets != ignore_index
    count = int(valid.sum())
    if count == 0:
        return _result(np.zeros((), dtype=logits.dtype), (logits,), "cross_entropy",
                       lambda g: (np.zeros_like(logits.data),))
    if np.any((flat_targets[valid] < 0) | (flat_targets[valid] >= vocab)):
        raise DimensionError(f"cross_entropy: target outside [0, {vocab})")
    denominator = float(normalizer if normalizer is not None else count)

    shifted = flat - flat.max(axis=-1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    rows = np.nonzero(valid)[0]
    picked = log_probs[rows, flat_targets[rows]]
    out = np.asarray(-picked.sum() / denominator, dtype=logits.dtype)

    def backward(g):
        grad = np.exp(log_probs)
        grad[rows, flat_targets[rows]] -= 1.0
        grad[~valid] = 0.0
        return ((grad * (g / denominator)).reshape(logits.shape),)
    return _result(out, (logits,), "cross_entropy", backward)


def l1_masked(prediction, target, mask, normalizer=None):
    """
    Sum of |prediction - target| over rows selected by `mask` (one flag per
    position on the leading axes), divided by `normalizer` (default: selected
    rows times the feature width).
    """
    mask = np.asarray(mask, dtype=bool)
    width = prediction.shape[-1]
    count = int(mask.sum())
    if count == 0:
        return _result(np.zeros((), dtype=prediction.dtype), (prediction,), "l1",
                       lambda g: (np.zeros_like(prediction.data),))
    denominator = float(normalizer if normalizer is not None else count * width)
    weights = mask[..., None].astype(prediction.dtype)
    diff = (prediction - Tensor(target, dtype=prediction.dtype)).abs()
    return (diff * weights).sum() * (1.0 / denominator)
