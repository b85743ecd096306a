"""
Evaluation metrics for the downstream tasks. Pure functions over numpy
arrays; setup.py compiles this module with Cython when it is available.
"""
import cython
import numpy as np

from ctal.errors import MetricUndefinedError


def is_compiled():
    return cython.compiled


def _vector(values, name):
    array = np.asarray(values, dtype=np.float64).reshape(-1)
    if array.size == 0:
        raise MetricUndefinedError(f"{name} is empty")
    return array


def metric_wa_ua(preds, golds, num_classes):
    """
    WA: overall accuracy. UA: unweighted mean of the per-class recalls; every
    class must occur among the golds.
    """
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    golds = np.asarray(golds, dtype=np.int64).reshape(-1)
    if preds.shape != golds.shape or golds.size == 0:
        raise MetricUndefinedError(f"{preds.size} predictions for {golds.size} golds")
    support = np.bincount(golds, minlength=num_classes)
    if len(support) > num_classes:
        raise MetricUndefinedError(f"gold label outside [0, {num_classes})")
    absent = np.nonzero(support == 0)[0]
    if len(absent):
        raise MetricUndefinedError(f"UA is undefined: classes {absent.tolist()} never occur in the golds")
    correct = preds == golds
    hits = np.bincount(golds[correct], minlength=num_classes)
    return float(correct.mean()), float(np.mean(hits / support))


def metric_acc2_f1(pred_scores, gold_scores):
    """
    Sign-binarised accuracy and positive-class F1. A score counts as
    positive when > 0, so a gold of exactly 0 is negative. F1 is 0 when
    there is no true positive.
    """
    pred = _vector(pred_scores, "predictions") > 0
    gold = _vector(gold_scores, "golds") > 0
    if pred.shape != gold.shape:
        raise MetricUndefinedError(f"{pred.size} predictions for {gold.size} golds")
    tp = float(np.sum(pred & gold))
    fp = float(np.sum(pred & ~gold))
    fn = float(np.sum(~pred & gold))
    f1 = 0.0 if tp == 0 else 2.0 * tp / (2.0 * tp + fp + fn)
    return float(np.mean(pred == gold)), f1


def metric_mae_corr(preds, golds):
    preds = _vector(preds, "predictions")
    golds = _vector(golds, "golds")
    if preds.shape != golds.shape:
        raise MetricUndefinedError(f"{preds.size} predictions for {golds.size} golds")
    mae = float(np.mean(np.abs(preds - golds)))
    if preds.size < 2:
        raise MetricUndefinedError("correlation needs at least two pairs")
    dp = preds - preds.mean()
    dg = golds - golds.mean()
    denominator = np.sqrt(np.sum(dp * dp) * np.sum(dg * dg))
    if denominator == 0.0:
        raise MetricUndefinedError("correlation is undefined for a constant sequence")
    return mae, float(np.sum(dp * dg) / denominator)


def error_rates(scores_same, scores_diff):
    """
    False-reject and false-accept rates at every threshold of the sweep: the
    distinct scores in ascending order, then +inf. A trial is accepted when
    its score is >= the threshold.

    :return: (thresholds, frr, far)
    """
    same = np.sort(_vector(scores_same, "same-speaker scores"))
    diff = np.sort(_vector(scores_diff, "different-speaker scores"))
    thresholds = np.append(np.unique(np.concatenate([same, diff])), np.inf)
    frr = np.searchsorted(same, thresholds, side="left") / same.size
    far = 1.0 - np.searchsorted(diff, thresholds, side="left") / diff.size
    return thresholds, frr, far


def metric_eer(scores_same, scores_diff):
    """
    Equal error rate, interpolating linearly between the two sweep points
    where frr - far changes sign. Higher scores mean "same speaker".
    """
    _, frr, far = error_rates(scores_same, scores_diff)
    gap = frr - far
    k = int(np.argmax(gap >= 0.0))
    if k == 0:
        return float(frr[0])
    alpha = -gap[k - 1] / (gap[k] - gap[k - 1])
    return float(frr[k - 1] + alpha * (frr[k] - frr[k - 1]))


def cosine_similarity_matrix(embeddings):
    embeddings = np.asarray(embeddings, dtype=np.float64)
    norms = np.linalg.norm(embeddings, axis=1, keepdims=True)
    unit = embeddings / np.maximum(norms, 1e-12)
    return unit @ unit.T


def trial_scores(embeddings, speakers):
    """
    Cosine scores of every unordered pair of distinct examples, split into
    same-speaker and different-speaker trials.
    """
    speakers = np.asarray(speakers)
    scores = cosine_similarity_matrix(embeddings)
    upper = np.triu_indices(len(speakers), k=1)
    same = speakers[upper[0]] == speakers[upper[1]]
    return scores[upper][same], scores[upper][~same]
