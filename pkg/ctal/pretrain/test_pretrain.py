import logging
import os

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from ctal.data import PairDataset, read_manifest, synth_corpus
from ctal.errors import ConfigError, NonFiniteError
from ctal.model import CtalModel, load_checkpoint, make
from ctal.pretrain.masking import IGNORE_INDEX, MaskingPlanner
from ctal.pretrain.objectives import mcam_loss, mlm_loss, pretraining_losses, step_normalizers
from ctal.pretrain.trainer import PretrainConfig, Pretrainer, pretrain_step, shard_gradients
from ctal.tensor import Tensor, default_dtype
from ctal.tensor.gradcheck import gradcheck
from ctal.tensor.optim import Adam
from ctal.testing import random_batch, toy_config
from ctal.text import BbpeVocab


def _corrupted(config, seed=0, **kwargs):
    rng = np.random.default_rng(seed)
    batch = random_batch(rng, config, text_lengths=(30, 24, 18), frame_lengths=(60, 48, 30))
    return MaskingPlanner(config.vocab_size, seed=seed, **kwargs)(batch, epoch=0)


@pytest.fixture
def model64():
    with default_dtype(np.float64):
        return CtalModel(toy_config(), seed=4)


class TestLosses:
    def test_uniform_logits_give_log_vocab(self):
        labels = np.array([[5, IGNORE_INDEX, 9]])
        assert_allclose(mlm_loss(Tensor(np.zeros((1, 3, 50))), labels).item(), np.log(50), rtol=1e-6)

    def test_confident_correct_logits_give_zero(self):
        logits = np.full((1, 2, 10), -50.0)
        logits[0, 0, 3] = logits[0, 1, 4] = 50.0
        assert mlm_loss(Tensor(logits, dtype=np.float64), np.array([[3, 4]])).item() < 1e-30

    def test_mlm_matches_loop(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(2, 5, 7))
        labels = np.where(rng.random((2, 5)) < 0.5, rng.integers(0, 7, (2, 5)), IGNORE_INDEX)
        labels[0, 0] = 3
        expected = []
        for b in range(2):
            for t in range(5):
                if labels[b, t] != IGNORE_INDEX:
                    row = logits[b, t]
                    expected.append(np.log(np.exp(row).sum()) - row[labels[b, t]])
        assert_allclose(mlm_loss(Tensor(logits, dtype=np.float64), labels).item(), np.mean(expected), rtol=1e-12)

    def test_mcam_exact_and_offset(self):
        rng = np.random.default_rng(1)
        original = rng.normal(size=(2, 6, 160))
        mask = np.zeros((2, 6), dtype=bool)
        mask[0, 1:3] = mask[1, 5] = True
        assert mcam_loss(Tensor(original, dtype=np.float64), original, mask).item() == 0.0
        assert_allclose(mcam_loss(Tensor(original + 1.0, dtype=np.float64), original, mask).item(), 1.0)

    def test_mcam_matches_loop(self):
        rng = np.random.default_rng(2)
        prediction, original = rng.normal(size=(2, 6, 160)), rng.normal(size=(2, 6, 160))
        mask = rng.random((2, 6)) < 0.4
        mask[0, 0] = True
        expected = np.mean([np.abs(prediction[b, t] - original[b, t]).mean()
                            for b in range(2) for t in range(6) if mask[b, t]])
        assert_allclose(mcam_loss(Tensor(prediction, dtype=np.float64), original, mask).item(), expected,
                        rtol=1e-12)

    def test_nothing_masked_is_zero(self):
        assert mcam_loss(Tensor(np.ones((1, 3, 160))), np.zeros((1, 3, 160)), np.zeros((1, 3), bool)).item() == 0.0
        assert mlm_loss(Tensor(np.ones((1, 3, 9))), np.full((1, 3), IGNORE_INDEX)).item() == 0.0


class TestObjective:
    def test_total_is_mlm_without_frame_plans(self, model64):
        corrupted, targets = _corrupted(model64.config, use_mcam=False)
        losses = pretraining_losses(model64, corrupted, targets)
        assert losses.mcam.item() == 0.0
        assert losses.total.item() == losses.mlm.item()

    def test_total_is_sum(self, model64):
        corrupted, targets = _corrupted(model64.config)
        losses = pretraining_losses(model64, corrupted, targets)
        assert losses.total.item() == losses.mlm.item() + losses.mcam.item()
        assert losses.mlm.item() > 0 and losses.mcam.item() > 0

    def test_token_loss_ignores_audio(self, model64):
        corrupted, targets = _corrupted(model64.config)
        before = pretraining_losses(model64, corrupted, targets).mlm.item()
        corrupted.audio_features = np.zeros_like(corrupted.audio_features)
        assert pretraining_losses(model64, corrupted, targets).mlm.item() == before

    def test_frame_loss_reaches_text_encoder(self, model64):
        corrupted, targets = _corrupted(model64.config)
        losses = pretraining_losses(model64, corrupted, targets, use_mlm=False)
        losses.mcam.backward()
        for layer in model64.text_encoder.layers:
            assert np.abs(layer.self_attention.query.weight.grad).sum() > 0
        assert np.abs(model64.text_embeddings.token.weight.grad).sum() > 0

    def test_needs_one_objective(self, model64):
        corrupted, targets = _corrupted(model64.config)
        with pytest.raises(ConfigError):
            pretraining_losses(model64, corrupted, targets, use_mlm=False, use_mcam=False)

    def test_full_graph_gradients(self):
        # wide init keeps the attention score gradients far above finite-difference noise
        with default_dtype(np.float64):
            model = CtalModel(toy_config(init_std=0.3), seed=4)
        corrupted, targets = _corrupted(model.config)
        checked = ["text_embeddings.token.weight", "text_encoder.layers.0.self_attention.key.weight",
                  "text_encoder.layers.1.self_attention.query.weight",
                  "text_encoder.layers.1.output_norm.weight", "audio_embeddings.projection.weight",
                  "audio_encoder.layers.0.cross_attention.value.weight",
                  "audio_encoder.layers.1.feed_forward.dense_in.bias", "mlm_head.decoder.weight",
                  "mcam_head.projection.bias"]
        params = dict(model.named_parameters())
        errors = gradcheck(lambda: pretraining_losses(model, corrupted, targets).total,
                           {name: params[name] for name in checked}, max_entries=6)
        for name, error in errors.items():
            assert error < 1e-4, name


class TestSteps:
    def test_shards_match_the_whole_batch(self, model64):
        corrupted, targets = _corrupted(model64.config)
        normalizers = step_normalizers(targets, 160)
        whole, whole_losses = shard_gradients(model64, corrupted, targets, normalizers, threads=1)
        split, split_losses = shard_gradients(model64, corrupted, targets, normalizers, threads=3)
        assert_allclose(split_losses, whole_losses, rtol=1e-10)
        assert whole.keys() == split.keys()
        for tensor in whole:
            assert_allclose(split[tensor], whole[tensor], rtol=1e-8, atol=1e-12)

    def test_step_is_reproducible(self):
        config = toy_config()
        results = []
        for _ in range(2):
            model = CtalModel(config, seed=1)
            optimizer = Adam(model.named_parameters(), lr=1e-3)
            results.append(pretrain_step(model, [_corrupted(config)], optimizer))
            results.append(pretrain_step(model, [_corrupted(config, seed=1)], optimizer))
        assert results[:2] == results[2:]
        assert np.all(np.isfinite(results))

    def test_non_finite_loss_aborts(self):
        config = toy_config()
        model = CtalModel(config, seed=1)
        model.mcam_head.projection.bias.data[:] = np.nan
        optimizer = Adam(model.named_parameters(), lr=1e-3)
        before = model.text_encoder.layers[0].feed_forward.dense_in.weight.data.copy()
        with pytest.raises(NonFiniteError, match="utt"):
            pretrain_step(model, [_corrupted(config)], optimizer)
        assert np.array_equal(model.text_encoder.layers[0].feed_forward.dense_in.weight.data, before)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            PretrainConfig(batch_size=6, accumulation_steps=4)
        with pytest.raises(ConfigError):
            PretrainConfig(use_mlm=False, use_mcam=False)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("pretrain_corpus")
    synth_corpus("pretrain", 12, str(out), seed=3, min_duration=0.3, max_duration=0.5)
    return out


class TestPretrainer:
    def test_writes_losses_and_checkpoints(self, corpus, tmp_path, caplog):
        dataset = PairDataset(read_manifest(str(corpus / "train.tsv")), BbpeVocab())
        config = toy_config(vocab_size=260, max_audio_frames=64)
        model = CtalModel(config, seed=0)
        run = tmp_path / "run"
        trainer = Pretrainer(model, dataset, PretrainConfig(steps=6, batch_size=4, accumulation_steps=2, lr=1e-3,
                                                            log_every=2, checkpoint_every=3), str(run))
        with caplog.at_level(logging.INFO):
            losses = trainer.train()
        assert list(losses.columns) == ["step", "lr", "total", "mlm", "mcam"]
        assert list(losses["step"]) == [1, 2, 3, 4, 5, 6]
        assert np.all(np.isfinite(losses[["total", "mlm", "mcam"]].to_numpy()))
        assert_allclose(losses["total"], losses["mlm"] + losses["mcam"], rtol=1e-6)
        written = pd.read_csv(run / "losses.csv")
        assert len(written) == 6
        assert sorted(os.listdir(run / "checkpoints")) == ["step_3.ckpt", "step_6.ckpt"]
        checkpoint = load_checkpoint(str(run / "model.ckpt"))
        assert checkpoint.metadata["step"] == "6"
        assert checkpoint.model_config().to_items() == config.to_items()
        assert "step 6" in caplog.text

    def test_rejects_model_without_heads(self, corpus):
        dataset = PairDataset(read_manifest(str(corpus / "train.tsv")), BbpeVocab())
        with pytest.raises(ConfigError):
            Pretrainer(CtalModel(toy_config(vocab_size=260), pretraining_heads=False), dataset, PretrainConfig())

    @pytest.mark.slow
    def test_overfits_small_corpus(self, tmp_path):
        synth_corpus("pretrain", 40, str(tmp_path), seed=0, min_duration=0.4, max_duration=0.6)
        dataset = PairDataset(read_manifest(str(tmp_path / "train.tsv")), BbpeVocab())
        model = CtalModel(make("ctal-tiny", vocab_size=260, dropout=0.0), seed=0)
        trainer = Pretrainer(model, dataset, PretrainConfig(steps=2000, batch_size=32, lr=1e-3,
                                                            warmup_fraction=0.05, log_every=200))
        losses = trainer.train()["total"].to_numpy()
        assert len(dataset) == 32
        assert losses[-10:].mean() <= 0.1 * losses[:10].mean()
