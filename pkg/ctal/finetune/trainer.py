import logging
import math
import os
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
from tqdm import tqdm

from ctal.errors import CheckpointError, ConfigError, MetricUndefinedError, NonFiniteError
from ctal.finetune import metrics
from ctal.finetune.fusion import FUSION_MODES
from ctal.finetune.heads import LabelMap, task_variant
from ctal.finetune.model import FINETUNE_ONLY, PRETRAINED_ONLY, CtalForFinetuning, extract_identity_embedding
from ctal.model.checkpoint import Checkpoint, load_pretrained, save_checkpoint
from ctal.tensor import no_grad
from ctal.tensor.nn import fork_rng
from ctal.tensor.optim import AdamW, CosineAnnealing, clip_grad_norm

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["epoch", "step", "lr", "loss", "task_loss"]
PREDICTION_COLUMNS = ["example_id", "prediction", "gold"]


@dataclass
class FinetuneConfig:
    """
    :param orthogonal_weight: weight of the orthogonality term, 0 to drop it
    :param fusion: "full", "text_only" or "audio_only"
    :param train_fraction: share of the training manifest used, a seeded
        random prefix
    :param eval_batch_size: pairs per evaluation batch
    """
    task: str = "emotion"
    epochs: int = 20
    batch_size: int = 4
    lr: float = 1e-5
    min_lr: float = 0.0
    weight_decay: float = 0.01
    clip_norm: float = 0.0
    orthogonal_weight: float = 1.0
    fusion: str = "full"
    train_fraction: float = 1.0
    seed: int = 0
    threads: int = 1
    eval_batch_size: int = 16

    def __post_init__(self):
        task_variant(self.task)
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"fusion must be one of {FUSION_MODES}, got {self.fusion!r}")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ConfigError(f"train_fraction must lie in (0, 1], got {self.train_fraction}")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigError("epochs and batch_size must be positive")


def training_subset(size, fraction, seed):
    """Indices of a seeded random prefix holding `fraction` of `size` examples."""
    count = max(1, int(math.ceil(fraction * size)))
    return np.sort(np.random.default_rng(seed).permutation(size)[:count])


def build_model(model_config, label_map, fusion="full", pretrained=None, seed=0):
    """
    A fresh fine-tuning model, with encoder weights from `pretrained` (a
    Checkpoint) when given. The pre-training heads are dropped.
    """
    model = CtalForFinetuning(model_config, label_map.variant, label_map.num_outputs, fusion, seed=seed)
    if pretrained is not None:
        load_pretrained(model, pretrained.tensors, allow_missing=FINETUNE_ONLY, allow_unexpected=PRETRAINED_ONLY)
    return model


class FineTuner:
    """
    :param model: CtalForFinetuning
    :param label_map: LabelMap of the task
    :param config: FinetuneConfig
    :param run_dir: where history.csv and model.ckpt go; nothing is written
        when None
    """

    def __init__(self, model, label_map, config, run_dir=None):
        self.model = model
        self.label_map = label_map
        self.config = config
        self.run_dir = run_dir
        self.optimizer = AdamW(model.named_parameters(), lr=config.lr, weight_decay=config.weight_decay)
        self.history = []

    def train(self, dataset):
        config = self.config
        indices = training_subset(len(dataset), config.train_fraction, config.seed)
        subset = dataset.subset(indices)
        targets = self.label_map.encode(subset.labels)
        steps_per_epoch = int(math.ceil(len(subset) / config.batch_size))
        schedule = CosineAnnealing(config.lr, config.epochs * steps_per_epoch, config.min_lr)
        rng = np.random.default_rng(config.seed)
        logger.info("Fine-tuning on %d of %d pairs for %d epochs: %s", len(subset), len(dataset), config.epochs,
                    asdict(config))

        step = 0
        self.model.train()
        for epoch in tqdm(range(1, config.epochs + 1), desc="finetune", disable=None):
            losses = []
            for batch in subset.batches(config.batch_size, rng, labels=targets):
                self.optimizer.lr = schedule(step)
                with fork_rng([config.seed, step]):
                    total, task, _ = self.model.loss(batch, batch.labels, config.orthogonal_weight)
                if not np.isfinite(total.item()):
                    raise NonFiniteError(f"fine-tuning loss {total.item()} at step {step + 1} on "
                                         f"{batch.utterance_ids}")
                self.model.zero_grad()
                total.backward()
                grads = [p.grad for p in self.optimizer.params]
                if config.clip_norm:
                    clip_grad_norm(grads, config.clip_norm)
                self.optimizer.step(grads)
                step += 1
                self.history.append((epoch, step, self.optimizer.lr, total.item(), task.item()))
                losses.append(total.item())
            logger.info("epoch %d loss %.4f", epoch, float(np.mean(losses)))
        self.model.zero_grad()
        self.model.eval()
        if self.run_dir is not None:
            os.makedirs(self.run_dir, exist_ok=True)
            pd.DataFrame(self.history, columns=HISTORY_COLUMNS).to_csv(os.path.join(self.run_dir, "history.csv"),
                                                                      index=False)
            save_checkpoint(os.path.join(self.run_dir, "model.ckpt"), self.checkpoint())
        return pd.DataFrame(self.history, columns=HISTORY_COLUMNS)

    def checkpoint(self):
        return finetuned_checkpoint(self.model, self.label_map, steps=len(self.history))


def finetuned_checkpoint(model, label_map, **metadata):
    return Checkpoint.from_model(model, kind="finetune", task=label_map.task, fusion=model.fusion,
                                 labels="|".join(label_map.classes), **metadata)


def load_finetuned(checkpoint):
    """(model, label_map) from a Checkpoint written by fine-tuning."""
    meta = checkpoint.metadata
    if meta.get("kind") != "finetune":
        raise CheckpointError(f"not a fine-tuned checkpoint (kind={meta.get('kind')!r})")
    classes = meta["labels"].split("|") if meta.get("labels") else []
    label_map = LabelMap(meta["task"], classes)
    model = CtalForFinetuning(checkpoint.model_config(), label_map.variant, label_map.num_outputs,
                              meta.get("fusion", "full"), initialize=False)
    missing, unexpected = model.load_state_dict(checkpoint.tensors, strict=False)
    if missing or unexpected:
        raise CheckpointError(f"unmatched parameters: missing {missing[:5]}, unexpected {unexpected[:5]}")
    return model.eval(), label_map


def predict(model, dataset, batch_size=16, threads=1):
    """
    Head outputs for every pair, in dataset order: [N, C] logits or [N]
    scores. Batches run in parallel.
    """
    model.eval()
    chunks = [range(start, min(start + batch_size, len(dataset))) for start in range(0, len(dataset), batch_size)]

    def work(chunk):
        with no_grad():
            return model(dataset.batch(chunk)).numpy()

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return np.concatenate(list(pool.map(work, chunks)))


def identity_embeddings(model, dataset, batch_size=16):
    return np.concatenate([extract_identity_embedding(model, dataset.batch(range(start, min(start + batch_size,
                                                                                          len(dataset)))))
                           for start in range(0, len(dataset), batch_size)])


def predictions_frame(dataset, label_map, outputs):
    if label_map.variant == "regression":
        predicted = [float(v) for v in outputs]
    else:
        predicted = label_map.decode(np.argmax(outputs, axis=-1))
    return pd.DataFrame({"example_id": dataset.utterance_ids, "prediction": predicted, "gold": dataset.labels},
                        columns=PREDICTION_COLUMNS)


def score_predictions(frame, task, classes=None):
    """
    Metrics from a prediction table alone (columns example_id, prediction,
    gold).

    :param classes: class names for UA; taken from the golds when omitted
    """
    variant = task_variant(task)
    if variant == "regression":
        preds = frame["prediction"].astype(float).to_numpy()
        golds = frame["gold"].astype(float).to_numpy()
        acc2, f1 = metrics.metric_acc2_f1(preds, golds)
        mae, corr = metrics.metric_mae_corr(preds, golds)
        return {"acc2": acc2, "f1": f1, "mae": mae, "corr": corr}
    golds = frame["gold"].astype(str)
    classes = sorted(set(golds)) if classes is None else list(classes)
    index = {name: i for i, name in enumerate(classes)}
    unknown = sorted(set(golds) - set(index))
    if unknown:
        raise MetricUndefinedError(f"gold labels {unknown[:5]} are not among the classes")
    gold_ids = golds.map(index).to_numpy(dtype=np.int64)
    pred_ids = frame["prediction"].astype(str).map(lambda name: index.get(name, -1)).to_numpy()
    if variant == "speaker":
        return {"accuracy": float(np.mean(pred_ids == gold_ids))}
    wa, ua = metrics.metric_wa_ua(pred_ids, gold_ids, len(classes))
    return {"wa": wa, "ua": ua}


def evaluate(model, dataset, label_map, batch_size=16, threads=1):
    """
    Speaker evaluation is open-set: identification accuracy covers the pairs
    whose speaker the head was trained on, and the EER is scored from
    identity embeddings over every pair.

    :return: (metrics dict, prediction DataFrame)
    """
    if label_map.variant != "speaker":
        label_map.encode(dataset.labels)
    frame = predictions_frame(dataset, label_map, predict(model, dataset, batch_size, threads))
    if label_map.variant == "speaker":
        report = _speaker_report(model, dataset, label_map, frame, batch_size)
    else:
        classes = None
        if label_map.variant == "classification":
            present = set(frame["gold"])
            classes = [c for c in label_map.classes if c in present]
            dropped = [c for c in label_map.classes if c not in present]
            if dropped:
                logger.warning("Classes %s never occur in the %d evaluation pairs; UA averages over the other %d",
                               dropped, len(dataset), len(classes))
        report = score_predictions(frame, label_map.task, classes)
    logger.info("Evaluation on %d pairs: %s", len(dataset), report)
    return report, frame


def _speaker_report(model, dataset, label_map, frame, batch_size):
    report = {}
    known = frame["gold"].isin(label_map.classes)
    if known.any():
        report.update(score_predictions(frame[known], label_map.task, label_map.classes))
    else:
        logger.info("No evaluation speaker was seen in training; skipping identification accuracy")
    if not known.all():
        logger.info("%d of %d pairs come from speakers unseen in training", int((~known).sum()), len(frame))
    same, diff = metrics.trial_scores(identity_embeddings(model, dataset, batch_size), dataset.labels)
    if len(same) and len(diff):
        report["eer"] = metrics.metric_eer(same, diff)
    else:
        logger.warning("No %s trials for EER", "same-speaker" if not len(same) else "different-speaker")
    return report


def embedding_checkpoint(model, dataset, batch_size=16):
    """
    One h_fuse vector per utterance, stored under its utterance id in the
    checkpoint container.
    """
    vectors = identity_embeddings(model, dataset, batch_size)
    checkpoint = Checkpoint.from_model(model, kind="embeddings", count=len(dataset))
    checkpoint.tensors = OrderedDict(zip(dataset.utterance_ids, vectors))
    if len(checkpoint.tensors) != len(dataset):
        logger.warning("Duplicate utterance ids: %d embeddings kept for %d pairs", len(checkpoint.tensors),
                       len(dataset))
    return checkpoint
