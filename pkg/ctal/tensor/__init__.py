from ctal.tensor.tensor import (Tensor, as_tensor, concat, default_dtype, get_default_dtype, is_grad_enabled,
                                no_grad, where)
from ctal.tensor.autograd import ComputeGraph, backward
from ctal.tensor.optim import (Adam, AdamW, CosineAnnealing, LinearWarmupDecay, OptimizerState, adam_step,
                               clip_grad_norm, lr_cosine_anneal, lr_linear_warmup_decay)
