import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
from tqdm import tqdm

from ctal.errors import ConfigError, NonFiniteError
from ctal.model.checkpoint import Checkpoint, save_checkpoint
from ctal.pretrain.masking import MaskingPlanner
from ctal.pretrain.objectives import pretraining_losses
from ctal.tensor import backward
from ctal.tensor.nn import fork_rng
from ctal.tensor.optim import Adam, LinearWarmupDecay, clip_grad_norm

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ["step", "lr", "total", "mlm", "mcam"]


@dataclass
class PretrainConfig:
    """
    :param steps: optimizer steps (full-scale runs use 1,000,000)
    :param batch_size: pairs per optimizer step, split over accumulation
        micro-batches
    :param warmup_fraction: share of the steps spent warming up the lr
    :param clip_norm: global gradient-norm limit, 0 for none
    :param threads: data-parallel shards per micro-batch
    :param checkpoint_every: steps between checkpoints, 0 for the final one only
    """
    steps: int = 1000
    batch_size: int = 16
    lr: float = 5e-5
    warmup_fraction: float = 0.1
    weight_decay: float = 0.0
    clip_norm: float = 0.0
    accumulation_steps: int = 1
    threads: int = 1
    seed: int = 0
    use_mlm: bool = True
    use_mcam: bool = True
    mcam_replace_mode: str = "contiguous"
    log_every: int = 10
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.steps <= 0 or self.batch_size <= 0 or self.accumulation_steps <= 0:
            raise ConfigError("steps, batch_size and accumulation_steps must be positive")
        if self.batch_size % self.accumulation_steps != 0:
            raise ConfigError(f"batch_size {self.batch_size} is not divisible by "
                              f"accumulation_steps {self.accumulation_steps}")
        if not (self.use_mlm or self.use_mcam):
            raise ConfigError("at least one of use_mlm and use_mcam must be on")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigError(f"warmup_fraction must lie in [0, 1), got {self.warmup_fraction}")

    @property
    def warmup_steps(self):
        return int(self.warmup_fraction * self.steps)


def _shards(size, count):
    return [list(s) for s in np.array_split(np.arange(size), min(max(1, count), size)) if len(s)]


def shard_gradients(model, batch, targets, normalizers, use_mlm=True, use_mcam=True, threads=1,
                    executor=None, dropout_seed=None):
    """
    Forward and backward over data-parallel shards of one micro-batch.
    Normalizers cover the whole step, so shard losses add up to the step
    loss and shard gradients to the step gradient.

    :return: (leaf gradient dict, [total, mlm, mcam] summed over shards)
    """
    shards = _shards(batch.batch_size, threads)

    def work(index):
        rows = shards[index]
        grads = {}
        seed = [0, index] if dropout_seed is None else list(dropout_seed) + [index]
        with fork_rng(seed):
            losses = pretraining_losses(model, batch.select(rows), targets.select(rows), use_mlm, use_mcam,
                                        normalizers)
        values = losses.values()
        if not np.all(np.isfinite(values)):
            raise NonFiniteError(f"loss is not finite (total, mlm, mcam = {values}) on utterances "
                                 f"{[batch.utterance_ids[r] for r in rows] if batch.utterance_ids else rows}")
        backward(losses.total, accumulate_into=grads)
        return grads, values

    if executor is None or len(shards) == 1:
        results = [work(i) for i in range(len(shards))]
    else:
        results = list(executor.map(work, range(len(shards))))

    reduced = {}
    totals = np.zeros(3)
    for grads, values in results:
        for tensor, grad in grads.items():
            reduced[tensor] = grad if tensor not in reduced else reduced[tensor] + grad
        totals += values
    return reduced, totals.tolist()


def pretrain_step(model, micro_batches, optimizer, use_mlm=True, use_mcam=True, threads=1, clip_norm=0.0,
                  executor=None, dropout_seed=None):
    """
    One optimizer update over already corrupted micro-batches.

    :param micro_batches: list of (corrupted PairBatch, MaskedTargets)
    :return: (total, mlm, mcam) for the step
    """
    model.train()
    feature_dim = model.config.audio_feature_dim
    tokens = sum(t.num_labelled_tokens for _, t in micro_batches)
    frames = sum(t.num_masked_frames for _, t in micro_batches)
    normalizers = (tokens or None), (frames * feature_dim or None)

    grads = {}
    totals = np.zeros(3)
    for i, (batch, targets) in enumerate(micro_batches):
        seed = None if dropout_seed is None else list(dropout_seed) + [i]
        micro_grads, values = shard_gradients(model, batch, targets, normalizers, use_mlm, use_mcam, threads,
                                              executor, seed)
        for tensor, grad in micro_grads.items():
            grads[tensor] = grad if tensor not in grads else grads[tensor] + grad
        totals += values

    aligned = [grads.get(p) for p in optimizer.params]
    if clip_norm:
        clip_grad_norm(aligned, clip_norm)
    optimizer.step(aligned)
    return tuple(float(v) for v in totals)


class Pretrainer:
    """
    :param model: CtalModel with pre-training heads
    :param dataset: PairDataset
    :param config: PretrainConfig
    :param run_dir: directory for losses.csv and checkpoints; nothing is
        written when None
    """

    def __init__(self, model, dataset, config, run_dir=None):
        if not hasattr(model, "mlm_head"):
            raise ConfigError("pre-training needs a model built with pretraining_heads=True")
        self.model = model
        self.dataset = dataset
        self.config = config
        self.run_dir = run_dir
        self.optimizer = Adam(model.named_parameters(), lr=config.lr, weight_decay=config.weight_decay)
        self.schedule = LinearWarmupDecay(config.lr, config.warmup_steps, config.steps)
        self.planner = MaskingPlanner(model.config.vocab_size, config.seed, config.mcam_replace_mode,
                                      config.use_mlm, config.use_mcam)
        self.history = []
        self.checkpoints = []
        self.step_count = 0

    def micro_batches(self):
        """Endless (epoch, batch) stream; each epoch is a fresh permutation."""
        rng = np.random.default_rng(self.config.seed)
        size = self.config.batch_size // self.config.accumulation_steps
        epoch = 0
        while True:
            for batch in self.dataset.batches(size, rng):
                yield epoch, batch
            epoch += 1

    @property
    def losses(self):
        return pd.DataFrame(self.history, columns=LOSS_COLUMNS)

    def train(self):
        config = self.config
        if self.run_dir is not None:
            os.makedirs(os.path.join(self.run_dir, "checkpoints"), exist_ok=True)
        logger.info("Pre-training for %d steps: %s", config.steps, asdict(config))
        stream = self.micro_batches()
        with ThreadPoolExecutor(max_workers=max(1, config.threads)) as executor:
            for step in tqdm(range(1, config.steps + 1), desc="pretrain", disable=None):
                self.optimizer.lr = self.schedule(step)
                micro = []
                for _ in range(config.accumulation_steps):
                    epoch, batch = next(stream)
                    batch = batch.truncated(self.model.config.max_text_len, self.model.config.max_audio_frames)
                    micro.append(self.planner(batch, epoch, executor))
                total, mlm, mcam = pretrain_step(self.model, micro, self.optimizer, config.use_mlm, config.use_mcam,
                                                 config.threads, config.clip_norm, executor,
                                                 dropout_seed=(config.seed, step))
                self.step_count = step
                self.history.append((step, self.optimizer.lr, total, mlm, mcam))
                if step % config.log_every == 0 or step == config.steps:
                    logger.info("step %d lr %.3g loss %.4f (mlm %.4f, mcam %.4f)", step, self.optimizer.lr,
                                total, mlm, mcam)
                if config.checkpoint_every and step % config.checkpoint_every == 0 and step < config.steps:
                    self.save(os.path.join("checkpoints", f"step_{step}.ckpt"))
        self.save(os.path.join("checkpoints", f"step_{config.steps}.ckpt"))
        self.save("model.ckpt")
        return self.losses

    def save(self, name):
        if self.run_dir is None:
            return None
        path = os.path.join(self.run_dir, name)
        save_checkpoint(path, Checkpoint.from_model(self.model, kind="pretrain", step=self.step_count,
                                                    seed=self.config.seed))
        self.losses.to_csv(os.path.join(self.run_dir, "losses.csv"), index=False)
        self.checkpoints.append(path)
        logger.info("Saved %s", path)
        return path


def run_pretraining(config, dataset, model, run_dir=None):
    """
    Trains `model` in place; returns the checkpoint paths written (empty
    when `run_dir` is None).
    """
    trainer = Pretrainer(model, dataset, config, run_dir)
    trainer.train()
    return trainer.checkpoints
