import logging

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from ctal.data import PairDataset, read_manifest, synth_corpus
from ctal.errors import ConfigError, DimensionError, ManifestError, NonFiniteError
from ctal.finetune.fusion import orthogonal_loss
from ctal.finetune.heads import LabelMap, TaskHead, finetune_loss, task_variant
from ctal.finetune.model import FINETUNE_ONLY, PRETRAINED_ONLY, CtalForFinetuning, extract_identity_embedding
from ctal.finetune.trainer import (FinetuneConfig, FineTuner, build_model, embedding_checkpoint, evaluate,
                                   load_finetuned, score_predictions, training_subset)
from ctal.model import Checkpoint, CtalModel, load_checkpoint, load_pretrained
from ctal.tensor import Tensor, default_dtype
from ctal.testing import random_batch, toy_config
from ctal.text import BbpeVocab


class TestLabelMap:
    def test_fit_sorts_classes(self):
        labels = LabelMap.fit("emotion", ["sad", "happy", "sad", "angry"])
        assert labels.classes == ["angry", "happy", "sad"]
        assert labels.num_outputs == 3
        assert list(labels.encode(["sad", "angry"])) == [2, 0]
        assert labels.decode([1, 2]) == ["happy", "sad"]

    def test_unknown_label(self):
        with pytest.raises(ManifestError):
            LabelMap.fit("speaker", ["spk00", "spk01"]).encode(["spk02"])

    def test_needs_two_classes(self):
        with pytest.raises(ManifestError):
            LabelMap.fit("emotion", ["sad", "sad"])

    def test_regression_labels(self):
        labels = LabelMap.fit("sentiment", ["-1.5", "2.0"])
        assert labels.num_outputs == 1
        assert_allclose(labels.encode(["-1.5", "0.3"]), [-1.5, 0.3])
        with pytest.raises(ManifestError):
            labels.encode(["positive"])

    def test_unknown_task(self):
        with pytest.raises(ConfigError):
            task_variant("translation")


class TestHeads:
    def test_regression_head_is_one_score_per_pair(self):
        head = TaskHead("regression", 6, 1)
        assert head(Tensor(np.ones((3, 6)))).shape == (3,)
        with pytest.raises(ConfigError):
            TaskHead("regression", 6, 2)

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            TaskHead("classification", 6, 4)(Tensor(np.ones((2, 5))))

    def test_l1_regression_loss(self):
        head = TaskHead("regression", 2, 1)
        head.projection.weight.data[:] = [[1.0], [0.0]]
        total, task, prediction = finetune_loss(head, Tensor(np.array([[1.0, 5.0], [-2.0, 5.0]])), [0.0, 0.0])
        assert_allclose(prediction.numpy(), [1.0, -2.0])
        assert task.item() == pytest.approx(1.5)
        assert total is task

    def test_orthogonal_weight_scales_the_extra_term(self):
        head = TaskHead("classification", 4, 3)
        h = Tensor(np.random.default_rng(0).normal(size=(2, 4)), dtype=np.float64)
        orth = Tensor(0.25, dtype=np.float64)
        for weight in (0.0, 0.5, 1.0):
            total, task, _ = finetune_loss(head, h, [0, 2], orth, weight)
            assert total.item() == pytest.approx(task.item() + 0.25 * weight)
        # all-zero weights give uniform logits
        assert task.item() == pytest.approx(np.log(3))


@pytest.fixture
def model64():
    with default_dtype(np.float64):
        return CtalForFinetuning(toy_config(), "classification", 4, seed=2).eval()


class TestFinetuningModel:
    def test_has_no_pretraining_heads(self, model64):
        names = [name for name, _ in model64.named_parameters()]
        assert not [n for n in names if n.startswith(PRETRAINED_ONLY)]
        assert any(n.startswith("attention_pool.") for n in names)
        assert any(n.startswith("task_head.") for n in names)

    def test_forward_shapes(self, model64):
        batch = random_batch(np.random.default_rng(0), model64.config)
        assert model64(batch).shape == (2, 4)
        assert model64.fuse(batch).h_fuse.shape == (2, 2 * model64.config.hidden_size)

    def test_loss_adds_weighted_orthogonal_term(self, model64):
        batch = random_batch(np.random.default_rng(1), model64.config)
        fused = model64.fuse(batch)
        orth = orthogonal_loss(fused.h_attn_a, fused.h_attn_w, fused.h_max_a, fused.h_max_w).item()
        total, task, _ = model64.loss(batch, np.array([1, 3]), orthogonal_weight=0.5)
        assert_allclose(total.item(), task.item() + 0.5 * orth, rtol=1e-10)
        total, task, _ = model64.loss(batch, np.array([1, 3]), orthogonal_weight=0.0)
        assert total.item() == task.item()

    def test_single_stream_ignores_orthogonal_term(self):
        with default_dtype(np.float64):
            model = CtalForFinetuning(toy_config(), "classification", 4, fusion="text_only", seed=2).eval()
        total, task, _ = model.loss(random_batch(np.random.default_rng(1), model.config), np.array([0, 1]))
        assert total.item() == task.item()

    def test_text_only_ignores_audio(self):
        with default_dtype(np.float64):
            model = CtalForFinetuning(toy_config(), "regression", 1, fusion="text_only", seed=3).eval()
        batch = random_batch(np.random.default_rng(2), model.config)
        other = random_batch(np.random.default_rng(2), model.config)
        other.audio_features[:] = np.random.default_rng(9).normal(size=other.audio_features.shape)
        assert_allclose(model(batch).numpy(), model(other).numpy(), rtol=1e-12)

    def test_loads_pretrained_encoder(self):
        config = toy_config()
        pretrained = CtalModel(config, seed=5)
        labels = LabelMap("emotion", ["angry", "happy", "sad"])
        model = build_model(config, labels, pretrained=Checkpoint.from_model(pretrained), seed=1)
        pretrained_params = dict(pretrained.named_parameters())
        for name, param in model.named_parameters():
            if not name.startswith(FINETUNE_ONLY):
                assert_allclose(param.data, pretrained_params[name].data)
        missing, unexpected = load_pretrained(model, Checkpoint.from_model(pretrained).tensors,
                                              allow_missing=FINETUNE_ONLY, allow_unexpected=PRETRAINED_ONLY)
        assert missing and all(n.startswith(FINETUNE_ONLY) for n in missing)
        assert unexpected and all(n.startswith(PRETRAINED_ONLY) for n in unexpected)

    def test_identity_embedding_is_deterministic_and_padding_free(self, model64):
        rng = np.random.default_rng(3)
        batch = random_batch(rng, model64.config, text_lengths=(9, 5, 7), frame_lengths=(20, 11, 16))
        model64.train()
        first = extract_identity_embedding(model64, batch)
        assert model64.training
        assert_allclose(extract_identity_embedding(model64, batch), first)
        alone = extract_identity_embedding(model64, batch.select([1]))
        cosine = alone[0] @ first[1] / (np.linalg.norm(alone[0]) * np.linalg.norm(first[1]))
        assert cosine == pytest.approx(1.0, abs=1e-10)


def test_training_subset_is_a_seeded_prefix():
    first = training_subset(10, 0.5, seed=3)
    assert len(first) == 5 and len(set(first)) == 5
    assert list(first) == sorted(first)
    assert list(training_subset(10, 0.5, seed=3)) == list(first)
    assert len(training_subset(10, 1.0, seed=3)) == 10


def test_config_validation():
    with pytest.raises(ConfigError):
        FinetuneConfig(task="translation")
    with pytest.raises(ConfigError):
        FinetuneConfig(fusion="late")
    with pytest.raises(ConfigError):
        FinetuneConfig(train_fraction=0.0)


def test_score_predictions_from_table():
    frame = pd.DataFrame({"example_id": ["a", "b", "c", "d"], "prediction": ["sad", "sad", "happy", "happy"],
                          "gold": ["sad", "happy", "happy", "happy"]})
    report = score_predictions(frame, "emotion")
    assert report["wa"] == pytest.approx(0.75)
    assert report["ua"] == pytest.approx((1.0 + 2 / 3) / 2)
    frame = pd.DataFrame({"example_id": ["a", "b", "c"], "prediction": [1.0, -0.5, 2.0], "gold": [0.5, -1.0, 1.0]})
    report = score_predictions(frame, "sentiment")
    assert report["acc2"] == 1.0 and report["f1"] == 1.0
    assert report["mae"] == pytest.approx(2 / 3)


def _dataset(path, name="train.tsv"):
    return PairDataset(read_manifest(str(path / name), labelled=True), BbpeVocab())


@pytest.fixture(scope="module")
def emotion_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("emotion")
    synth_corpus("emotion", 16, str(out), seed=1, min_duration=0.3, max_duration=0.4)
    return out


class TestFineTuner:
    def test_trains_writes_and_reloads(self, emotion_corpus, tmp_path):
        dataset = _dataset(emotion_corpus)
        labels = LabelMap.fit("emotion", dataset.labels)
        model = build_model(toy_config(vocab_size=260), labels, seed=0)
        run = tmp_path / "run"
        tuner = FineTuner(model, labels, FinetuneConfig(epochs=2, batch_size=4, lr=1e-3), str(run))
        history = tuner.train(dataset)
        steps = 2 * int(np.ceil(len(dataset) / 4))
        assert list(history["step"]) == list(range(1, steps + 1))
        assert np.all(np.isfinite(history["loss"]))
        assert np.all(history["loss"] >= history["task_loss"] - 1e-6)
        assert len(pd.read_csv(run / "history.csv")) == steps

        checkpoint = load_checkpoint(str(run / "model.ckpt"))
        assert checkpoint.metadata["kind"] == "finetune"
        assert checkpoint.metadata["labels"].split("|") == labels.classes
        restored, restored_labels = load_finetuned(checkpoint)
        assert restored_labels.classes == labels.classes
        report, frame = evaluate(model, dataset, labels, batch_size=5, threads=2)
        again, restored_frame = evaluate(restored, dataset, restored_labels, batch_size=5)
        assert set(report) == {"wa", "ua"}
        assert list(frame.columns) == ["example_id", "prediction", "gold"]
        assert list(frame["example_id"]) == dataset.utterance_ids
        assert list(restored_frame["prediction"]) == list(frame["prediction"])
        assert again == report

    def test_train_fraction_uses_a_subset(self, emotion_corpus):
        dataset = _dataset(emotion_corpus)
        labels = LabelMap.fit("emotion", dataset.labels)
        model = build_model(toy_config(vocab_size=260), labels)
        history = FineTuner(model, labels, FinetuneConfig(epochs=1, batch_size=2, train_fraction=0.5)).train(dataset)
        assert len(history) == int(np.ceil(np.ceil(0.5 * len(dataset)) / 2))

    def test_non_finite_loss_aborts(self, emotion_corpus):
        dataset = _dataset(emotion_corpus)
        labels = LabelMap.fit("emotion", dataset.labels)
        model = build_model(toy_config(vocab_size=260), labels)
        model.task_head.projection.bias.data[:] = np.nan
        with pytest.raises(NonFiniteError):
            FineTuner(model, labels, FinetuneConfig(epochs=1)).train(dataset)

    def test_speaker_task_reports_eer(self, tmp_path):
        synth_corpus("speaker", 16, str(tmp_path), seed=2, num_speakers=2, min_duration=0.3, max_duration=0.4)
        dataset = _dataset(tmp_path)
        labels = LabelMap.fit("speaker", dataset.labels)
        model = build_model(toy_config(vocab_size=260), labels)
        report, _ = evaluate(model, dataset, labels)
        assert set(report) == {"accuracy", "eer"}
        assert 0.0 <= report["eer"] <= 1.0

    def test_speaker_verification_is_open_set(self, tmp_path):
        synth_corpus("speaker", 24, str(tmp_path), seed=3, num_speakers=4, min_duration=0.3, max_duration=0.4)
        dataset = _dataset(tmp_path)
        known = sorted(set(dataset.labels))[:2]
        labels = LabelMap.fit("speaker", known)
        model = build_model(toy_config(vocab_size=260), labels)
        report, frame = evaluate(model, dataset, labels)
        assert 0.0 <= report["eer"] <= 1.0
        seen = frame[frame["gold"].isin(known)]
        assert report["accuracy"] == pytest.approx(float(np.mean(seen["prediction"] == seen["gold"])))

        unseen = [i for i, label in enumerate(dataset.labels) if label not in known]
        report, _ = evaluate(model, dataset.subset(unseen), labels)
        assert set(report) <= {"eer"}

    def test_missing_class_is_named(self, emotion_corpus, caplog):
        dataset = _dataset(emotion_corpus)
        labels = LabelMap("emotion", sorted(set(dataset.labels)) + ["zzz"])
        model = build_model(toy_config(vocab_size=260), labels)
        with caplog.at_level(logging.WARNING):
            report, _ = evaluate(model, dataset, labels)
        assert "zzz" in caplog.text
        assert set(report) == {"wa", "ua"}

    def test_embedding_dump(self, emotion_corpus):
        dataset = _dataset(emotion_corpus)
        labels = LabelMap.fit("emotion", dataset.labels)
        model = build_model(toy_config(vocab_size=260), labels)
        checkpoint = embedding_checkpoint(model, dataset, batch_size=3)
        assert list(checkpoint.tensors) == dataset.utterance_ids
        assert all(v.shape == (16,) for v in checkpoint.tensors.values())
        assert checkpoint.metadata["kind"] == "embeddings"


@pytest.mark.slow
def test_model_learns_emotions(tmp_path):
    synth_corpus("emotion", 120, str(tmp_path), seed=0, min_duration=0.4, max_duration=0.6)
    train, test = _dataset(tmp_path), _dataset(tmp_path, "test.tsv")
    labels = LabelMap.fit("emotion", train.labels)
    model = build_model(toy_config(vocab_size=260, hidden_size=32, num_heads=4, intermediate_size=64), labels)
    FineTuner(model, labels, FinetuneConfig(epochs=30, batch_size=8, lr=1e-3)).train(train)
    fitted, _ = evaluate(model, train, labels)
    assert fitted["wa"] == 1.0
    report, _ = evaluate(model, test, labels)
    assert report["wa"] > 0.9
    assert report["ua"] > 0.9
