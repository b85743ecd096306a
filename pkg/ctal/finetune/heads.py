import logging

import numpy as np

from ctal.errors import ConfigError, DimensionError, ManifestError
from ctal.tensor import functional as F
from ctal.tensor.nn import Linear, Module
from ctal.tensor.tensor import Tensor

logger = logging.getLogger(__name__)

# task name -> head variant
TASKS = {
    "emotion": "classification",
    "sentiment": "regression",
    "speaker": "speaker",
}


def task_variant(task):
    try:
        return TASKS[task]
    except KeyError:
        raise ConfigError(f"unknown task {task!r}; known: {', '.join(TASKS)}") from None


class LabelMap:
    """
    Converts manifest label strings to head targets: class indices for the
    classification and speaker variants, floats for regression.
    """

    def __init__(self, task, classes=()):
        self.task = task
        self.variant = task_variant(task)
        self.classes = list(classes)
        self._index = {name: i for i, name in enumerate(self.classes)}

    @classmethod
    def fit(cls, task, labels):
        if task_variant(task) == "regression":
            return cls(task)
        classes = sorted(set(labels))
        if len(classes) < 2:
            raise ManifestError(f"{task}: need at least two distinct labels, got {classes}")
        return cls(task, classes)

    @property
    def num_outputs(self):
        return 1 if self.variant == "regression" else len(self.classes)

    def encode(self, labels):
        if self.variant == "regression":
            try:
                return np.array([float(label) for label in labels], dtype=np.float64)
            except (TypeError, ValueError) as e:
                raise ManifestError(f"{self.task}: regression labels must be numbers ({e})") from e
        unknown = sorted({label for label in labels if label not in self._index})
        if unknown:
            raise ManifestError(f"{self.task}: labels {unknown[:5]} were not seen in training")
        return np.array([self._index[label] for label in labels], dtype=np.int64)

    def decode(self, values):
        if self.variant == "regression":
            return [float(v) for v in values]
        return [self.classes[int(v)] for v in values]


class TaskHead(Module):
    """
    Linear map from h_fuse (width 2d) to C class logits, S speaker logits or
    one regression score.
    """

    def __init__(self, variant, input_size, num_outputs):
        super(TaskHead, self).__init__()
        if variant not in ("classification", "regression", "speaker"):
            raise ConfigError(f"unknown head variant {variant!r}")
        if variant == "regression" and num_outputs != 1:
            raise ConfigError("a regression head has exactly one output")
        self.variant = variant
        self.input_size = input_size
        self.projection = Linear(input_size, num_outputs)

    def forward(self, h_fuse):
        if h_fuse.shape[-1] != self.input_size:
            raise DimensionError(f"task head expects width {self.input_size}, got {h_fuse.shape[-1]}")
        out = self.projection(h_fuse)
        if self.variant == "regression":
            return out.reshape(out.shape[:-1])
        return out


def task_loss(head, prediction, target):
    """Cross-entropy for class-like variants, L1 for regression."""
    target = np.asarray(target)
    if head.variant == "regression":
        if target.shape != prediction.shape:
            raise DimensionError(f"regression targets {target.shape} do not match predictions {prediction.shape}")
        return (prediction - Tensor(target, dtype=prediction.dtype)).abs().mean()
    return F.cross_entropy(prediction, target.astype(np.int64))


def finetune_loss(head, h_fuse, target, orth=None, orthogonal_weight=1.0):
    """
    task loss + orthogonal_weight * orth.

    :return: (total, task, prediction)
    """
    prediction = head(h_fuse)
    task = task_loss(head, prediction, target)
    if orth is None or orthogonal_weight == 0.0:
        return task, task, prediction
    return task + orth * orthogonal_weight, task, prediction
