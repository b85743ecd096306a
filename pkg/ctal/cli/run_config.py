"""
Flat key=value run configuration shared by every command.

A config file holds one `key=value` per line; blank lines and lines starting
with `#` are ignored. Keys of the form `model.<name>` override fields of the
model preset. Later sources win: file, then `--set` flags, then dedicated
flags such as `--seed`.
"""
import dataclasses
import hashlib
import logging
import os
from dataclasses import dataclass, field

from ctal.errors import ConfigError, UserError
from ctal.finetune.trainer import FinetuneConfig
from ctal.model import make
from ctal.model.config import ModelConfig, coerce
from ctal.pretrain.trainer import PretrainConfig

logger = logging.getLogger(__name__)

MODEL_PREFIX = "model."


def _option(default, doc):
    return field(default=default, metadata={"doc": doc})


@dataclass
class RunConfig:
    preset: str = _option("ctal-tiny", "model preset id")
    vocab: str = _option("", "BBPE vocabulary file; empty for the byte-level identity vocabulary")
    train_manifest: str = _option("", "training manifest (audio_path, transcript[, label])")
    test_manifest: str = _option("", "evaluation manifest")
    feature_dir: str = _option("", "feature cache directory; empty extracts on the fly")
    checkpoint: str = _option("", "pre-trained checkpoint to fine-tune from; empty trains from scratch")
    seed: int = _option(0, "seed of initialisation, masking, shuffling and dropout")
    threads: int = _option(1, "cap on worker threads")

    pretrain_steps: int = _option(1000, "pre-training optimizer steps")
    pretrain_batch_size: int = _option(16, "pairs per pre-training step")
    pretrain_lr: float = _option(5e-5, "peak pre-training learning rate")
    warmup_fraction: float = _option(0.1, "share of pre-training steps spent warming up")
    pretrain_weight_decay: float = _option(0.0, "Adam weight decay during pre-training")
    clip_norm: float = _option(0.0, "global gradient-norm limit, 0 for none")
    accumulation_steps: int = _option(1, "micro-batches per pre-training step")
    use_mlm: bool = _option(True, "train the masked language modelling objective")
    use_mcam: bool = _option(True, "train the masked cross-modal acoustic objective")
    mcam_replace_mode: str = _option("contiguous", "source of replacement frames: contiguous or independent")
    log_every: int = _option(10, "steps between loss log lines")
    checkpoint_every: int = _option(0, "steps between pre-training checkpoints, 0 for the final one only")

    task: str = _option("emotion", "downstream task: emotion, sentiment or speaker")
    epochs: int = _option(20, "fine-tuning epochs")
    batch_size: int = _option(4, "pairs per fine-tuning step")
    lr: float = _option(1e-5, "peak fine-tuning learning rate")
    min_lr: float = _option(0.0, "learning rate at the end of the cosine schedule")
    weight_decay: float = _option(0.01, "AdamW weight decay during fine-tuning")
    orthogonal_weight: float = _option(1.0, "weight of the orthogonality term")
    fusion: str = _option("full", "pooled streams: full, text_only or audio_only")
    train_fraction: float = _option(1.0, "share of the training manifest used for fine-tuning")
    eval_batch_size: int = _option(16, "pairs per evaluation batch")

    model_overrides: dict = field(default_factory=dict, metadata={"doc": "model.<key> entries"})

    def pretrain_config(self):
        return PretrainConfig(steps=self.pretrain_steps, batch_size=self.pretrain_batch_size, lr=self.pretrain_lr,
                              warmup_fraction=self.warmup_fraction, weight_decay=self.pretrain_weight_decay,
                              clip_norm=self.clip_norm, accumulation_steps=self.accumulation_steps,
                              threads=self.threads, seed=self.seed, use_mlm=self.use_mlm, use_mcam=self.use_mcam,
                              mcam_replace_mode=self.mcam_replace_mode, log_every=self.log_every,
                              checkpoint_every=self.checkpoint_every)

    def finetune_config(self):
        return FinetuneConfig(task=self.task, epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                              min_lr=self.min_lr, weight_decay=self.weight_decay, clip_norm=self.clip_norm,
                              orthogonal_weight=self.orthogonal_weight, fusion=self.fusion,
                              train_fraction=self.train_fraction, seed=self.seed, threads=self.threads,
                              eval_batch_size=self.eval_batch_size)

    def model_config(self, vocab_size=None):
        """The preset with `model.*` overrides; a vocabulary, when given, fixes vocab_size."""
        overrides = dict(self.model_overrides)
        if vocab_size is not None:
            overrides["vocab_size"] = vocab_size
        return make(self.preset, **overrides)

    def to_items(self):
        items = [(f.name, getattr(self, f.name)) for f in dataclasses.fields(self) if f.name != "model_overrides"]
        items += [(MODEL_PREFIX + key, value) for key, value in sorted(self.model_overrides.items())]
        return items


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig) if f.name != "model_overrides"}
_MODEL_FIELDS = {f.name: f for f in dataclasses.fields(ModelConfig)}


def parse_assignment(text, source="--set"):
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"{source}: expected key=value, got {text!r}")
    return key.strip(), value.strip()


def apply_items(config, items):
    """Returns a copy of `config` with the (key, string value) pairs applied."""
    values = {name: getattr(config, name) for name in _FIELDS}
    model_overrides = dict(config.model_overrides)
    for key, value in items:
        if key.startswith(MODEL_PREFIX):
            name = key[len(MODEL_PREFIX):]
            if name not in _MODEL_FIELDS:
                raise ConfigError(f"unknown model config key {name!r}")
            model_overrides[name] = coerce(value, _MODEL_FIELDS[name].type)
        elif key in _FIELDS:
            values[key] = coerce(value, _FIELDS[key].type)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return RunConfig(model_overrides=model_overrides, **values)


def read_config_file(path):
    if not os.path.isfile(path):
        raise ConfigError(f"config file {path} does not exist")
    items = []
    with open(path, encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            items.append(parse_assignment(line, f"{path}:{line_number}"))
    return items


def load_run_config(path=None, assignments=(), **flags):
    """
    :param path: optional key=value file
    :param assignments: "key=value" strings from --set
    :param flags: dedicated flag values; None means not given
    """
    config = RunConfig()
    if path:
        config = apply_items(config, read_config_file(path))
    config = apply_items(config, [parse_assignment(a) for a in assignments])
    given = {k: str(v) for k, v in flags.items() if v is not None}
    return apply_items(config, given.items())


def describe_options():
    """(key, default, doc) rows for every run option."""
    return [(f.name, f.default, f.metadata["doc"]) for f in _FIELDS.values()]


def write_config(path, config):
    with open(path, "w", encoding="utf-8") as f:
        f.writelines(f"{key}={value}\n" for key, value in config.to_items())


def git_blob_sha1(path):
    """The id git gives the file's contents as a blob."""
    with open(path, "rb") as f:
        data = f.read()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_input_hashes(path, inputs):
    lines = []
    for input_path in inputs:
        if not input_path:
            continue
        if not os.path.isfile(input_path):
            raise UserError(f"input file {input_path} does not exist")
        lines.append(f"{git_blob_sha1(input_path)}  {input_path}\n")
    with open(path, "w", encoding="utf-8") as f:
        f.writelines(lines)
