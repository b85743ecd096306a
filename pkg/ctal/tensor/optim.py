"""
Adam and AdamW with the learning-rate schedules used for pre-training
(linear warmup then linear decay) and fine-tuning (cosine annealing).

The update follows the operation order of torch.optim.Adam, so the two agree
to float rounding.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ctal.errors import NonFiniteError

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    decoupled_weight_decay: bool = False
    step: int = 0
    exp_avg: list = field(default_factory=list)
    exp_avg_sq: list = field(default_factory=list)


def adam_step(params, grads, state, names=None):
    """
    One in-place Adam update of the arrays in `params`.

    With `state.decoupled_weight_decay` the decay is applied to the weights
    directly (AdamW); otherwise it is added to the gradient (L2). A zero decay
    is skipped in both cases, so AdamW(weight_decay=0) and Adam coincide.
    A `None` gradient leaves that parameter and its moments untouched.

    :param params: list of numpy arrays, updated in place
    :param grads: list of gradient arrays (or None), same order
    :param state: OptimizerState, moments created on the first call
    :param names: optional parameter names for error messages
    """
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    for i, grad in enumerate(grads):
        if grad is not None and not np.all(np.isfinite(grad)):
            name = names[i] if names is not None else f"parameter {i}"
            bad = int(grad.size - np.count_nonzero(np.isfinite(grad)))
            raise NonFiniteError(f"non-finite gradient for {name}: {bad} of {grad.size} entries "
                                 f"at optimizer step {state.step + 1}")
    if not state.exp_avg:
        state.exp_avg = [np.zeros_like(p) for p in params]
        state.exp_avg_sq = [np.zeros_like(p) for p in params]

    state.step += 1
    beta1, beta2 = state.betas
    bias_correction1 = 1.0 - beta1 ** state.step
    bias_correction2 = 1.0 - beta2 ** state.step
    step_size = state.lr / bias_correction1
    bias_correction2_sqrt = math.sqrt(bias_correction2)

    for param, grad, exp_avg, exp_avg_sq in zip(params, grads, state.exp_avg, state.exp_avg_sq):
        if grad is None:
            continue
        if state.weight_decay != 0.0:
            if state.decoupled_weight_decay:
                param *= 1.0 - state.lr * state.weight_decay
            else:
                grad = grad + state.weight_decay * param
        exp_avg *= beta1
        exp_avg += (1.0 - beta1) * grad
        exp_avg_sq *= beta2
        exp_avg_sq += (1.0 - beta2) * grad * grad
        denom = np.sqrt(exp_avg_sq) / bias_correction2_sqrt + state.eps
        param -= step_size * (exp_avg / denom)


class Adam:
    """
    :param named_params: iterable of (name, Parameter) pairs
    :param lr: initial learning rate
    :param betas: moment decay rates
    :param eps: denominator term
    :param weight_decay: L2 coefficient added to the gradient
    """
    decoupled_weight_decay = False

    def __init__(self, named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        named_params = list(named_params)
        self.names = [name for name, _ in named_params]
        self.params = [p for _, p in named_params]
        self.state = OptimizerState(lr=lr, betas=tuple(betas), eps=eps, weight_decay=weight_decay,
                                    decoupled_weight_decay=self.decoupled_weight_decay)

    @property
    def lr(self):
        return self.state.lr

    @lr.setter
    def lr(self, value):
        self.state.lr = float(value)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, grads=None):
        """
        Applies one update using `grads` (aligned with the parameters) or the
        parameters' own `.grad` buffers.
        """
        if grads is None:
            grads = [p.grad for p in self.params]
        adam_step([p.data for p in self.params], grads, self.state, self.names)


class AdamW(Adam):
    decoupled_weight_decay = True

    def __init__(self, named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        super(AdamW, self).__init__(named_params, lr, betas, eps, weight_decay)


def clip_grad_norm(grads, max_norm):
    """
    Rescales the gradient arrays in place so their global L2 norm is at most
    `max_norm`. Returns the norm before clipping.
    """
    present = [g for g in grads if g is not None]
    total = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in present))
    if max_norm is not None and total > max_norm > 0:
        scale = max_norm / (total + 1e-6)
        for g in present:
            g *= scale
    return total


def lr_linear_warmup_decay(step, warmup_steps, total_steps, base_lr):
    if step < 0:
        raise ValueError(f"negative step {step}")
    if warmup_steps >= total_steps:
        raise ValueError(f"warmup_steps ({warmup_steps}) must be below total_steps ({total_steps})")
    if step > total_steps:
        logger.warning("Step %d is past the end of the schedule (%d), using lr 0", step, total_steps)
        return 0.0
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    return base_lr * (total_steps - step) / (total_steps - warmup_steps)


def lr_cosine_anneal(step, total_steps, base_lr, min_lr=0.0):
    if total_steps <= 0:
        return base_lr
    progress = min(max(step, 0), total_steps) / total_steps
    return min_lr + (base_lr - min_lr) * (1.0 + math.cos(math.pi * progress)) / 2.0


class LinearWarmupDecay:
    def __init__(self, base_lr, warmup_steps, total_steps):
        self.base_lr = base_lr
        self.warmup_steps = warmup_steps
        self.total_steps = total_steps

    def __call__(self, step):
        return lr_linear_warmup_decay(step, self.warmup_steps, self.total_steps, self.base_lr)


class CosineAnnealing:
    def __init__(self, base_lr, total_steps, min_lr=0.0):
        self.base_lr = base_lr
        self.total_steps = total_steps
        self.min_lr = min_lr

    def __call__(self, step):
        return lr_cosine_anneal(step, self.total_steps, self.base_lr, self.min_lr)
