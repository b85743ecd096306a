import numpy as np
import pytest
from numpy.testing import assert_allclose

from ctal.errors import MetricUndefinedError
from ctal.finetune import metrics

sklearn_metrics = pytest.importorskip("sklearn.metrics")
stats = pytest.importorskip("scipy.stats")


def test_is_compiled_reports_a_bool():
    assert isinstance(metrics.is_compiled(), bool)


class TestClassification:
    def test_wa_ua_match_sklearn(self):
        rng = np.random.default_rng(0)
        golds = rng.permutation(np.tile(np.arange(4), 25))
        preds = np.where(rng.random(100) < 0.6, golds, rng.integers(0, 4, 100))
        wa, ua = metrics.metric_wa_ua(preds, golds, 4)
        assert_allclose(wa, sklearn_metrics.accuracy_score(golds, preds), rtol=1e-12)
        assert_allclose(ua, sklearn_metrics.recall_score(golds, preds, average="macro"), rtol=1e-12)

    def test_ua_differs_from_wa_on_imbalanced_golds(self):
        golds = np.array([0] * 8 + [1] * 2)
        preds = np.zeros(10, dtype=int)
        wa, ua = metrics.metric_wa_ua(preds, golds, 2)
        assert wa == pytest.approx(0.8)
        assert ua == pytest.approx(0.5)

    def test_absent_class_is_undefined(self):
        with pytest.raises(MetricUndefinedError):
            metrics.metric_wa_ua([0, 1, 1], [0, 1, 1], 3)

    def test_length_mismatch(self):
        with pytest.raises(MetricUndefinedError):
            metrics.metric_wa_ua([0, 1], [0, 1, 1], 2)


class TestRegression:
    def test_acc2_f1_match_sklearn(self):
        rng = np.random.default_rng(1)
        golds = np.round(rng.uniform(-3, 3, 200), 1)
        preds = golds + rng.normal(0, 1.0, 200)
        acc2, f1 = metrics.metric_acc2_f1(preds, golds)
        assert_allclose(acc2, sklearn_metrics.accuracy_score(golds > 0, preds > 0), rtol=1e-12)
        assert_allclose(f1, sklearn_metrics.f1_score(golds > 0, preds > 0, zero_division=0), rtol=1e-12)

    def test_zero_gold_counts_as_negative(self):
        acc2, _ = metrics.metric_acc2_f1([-0.5, 0.5], [0.0, 0.0])
        assert acc2 == 0.5

    def test_f1_without_true_positives_is_zero(self):
        _, f1 = metrics.metric_acc2_f1([-1.0, -2.0], [1.0, -1.0])
        assert f1 == 0.0

    def test_mae_corr_match_scipy(self):
        rng = np.random.default_rng(2)
        golds = rng.uniform(-3, 3, 50)
        preds = 0.5 * golds + rng.normal(0, 0.5, 50)
        mae, corr = metrics.metric_mae_corr(preds, golds)
        assert_allclose(mae, np.mean(np.abs(preds - golds)), rtol=1e-12)
        assert_allclose(corr, stats.pearsonr(preds, golds)[0], rtol=1e-10)

    @pytest.mark.parametrize("preds, golds", [([1.0], [2.0]), ([1.0, 1.0, 1.0], [0.0, 1.0, 2.0])])
    def test_correlation_undefined(self, preds, golds):
        with pytest.raises(MetricUndefinedError):
            metrics.metric_mae_corr(preds, golds)


def _error_rates_loop(same, diff):
    thresholds = sorted(set(same) | set(diff)) + [np.inf]
    frr = [sum(s < t for s in same) / len(same) for t in thresholds]
    far = [sum(d >= t for d in diff) / len(diff) for t in thresholds]
    return np.array(thresholds), np.array(frr), np.array(far)


class TestEqualErrorRate:
    def test_error_rates_match_loop(self):
        rng = np.random.default_rng(3)
        same = np.round(rng.normal(0.5, 0.2, 40), 2)
        diff = np.round(rng.normal(0.2, 0.2, 60), 2)
        for got, expected in zip(metrics.error_rates(same, diff), _error_rates_loop(list(same), list(diff))):
            assert_allclose(got, expected)

    def test_perfect_separation(self):
        assert metrics.metric_eer([0.9, 0.8], [0.1, 0.2]) == 0.0

    def test_overlapping_pairs(self):
        assert metrics.metric_eer([0.5, 0.9], [0.1, 0.6]) == pytest.approx(0.5)

    def test_invariant_to_monotone_rescaling(self):
        rng = np.random.default_rng(4)
        same = rng.normal(1.0, 1.0, 300)
        diff = rng.normal(0.0, 1.0, 500)
        assert_allclose(metrics.metric_eer(2.0 * same + 1.0, 2.0 * diff + 1.0), metrics.metric_eer(same, diff),
                        rtol=1e-12)

    def test_indistinguishable_scores_give_one_half(self):
        rng = np.random.default_rng(5)
        assert metrics.metric_eer(rng.normal(size=10000), rng.normal(size=10000)) == pytest.approx(0.5, abs=0.02)

    def test_eer_lies_between_the_rates_at_the_crossing(self):
        rng = np.random.default_rng(6)
        same, diff = rng.normal(1.0, 1.0, 200), rng.normal(0.0, 1.0, 200)
        _, frr, far = metrics.error_rates(same, diff)
        k = int(np.argmax(frr - far >= 0))
        eer = metrics.metric_eer(same, diff)
        assert min(frr[k - 1], far[k]) - 1e-12 <= eer <= max(frr[k], far[k - 1]) + 1e-12


class TestTrials:
    def test_cosine_matrix(self):
        rng = np.random.default_rng(7)
        embeddings = rng.normal(size=(5, 6))
        scores = metrics.cosine_similarity_matrix(embeddings)
        assert_allclose(np.diag(scores), 1.0, rtol=1e-12)
        assert_allclose(scores, scores.T)
        unit = embeddings / np.linalg.norm(embeddings, axis=1, keepdims=True)
        assert_allclose(scores[1, 3], unit[1] @ unit[3], rtol=1e-12)

    def test_trial_split(self):
        embeddings = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        same, diff = metrics.trial_scores(embeddings, ["a", "a", "b"])
        assert_allclose(same, [1 / np.sqrt(2)])
        assert_allclose(sorted(diff), [0.0, 1 / np.sqrt(2)], atol=1e-12)
