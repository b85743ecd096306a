"""
A small layer kit in the shape of torch.nn: modules own named parameters,
nest, and switch between train and eval mode.
"""
import contextlib
import threading
from collections import OrderedDict

import numpy as np

from ctal.errors import DimensionError
from ctal.tensor import functional as F
from ctal.tensor.tensor import Tensor, get_default_dtype

_dropout_local = threading.local()


@contextlib.contextmanager
def fork_rng(seed):
    """
    Makes every Dropout in this thread draw from a generator seeded with
    `seed` for the duration of the block.
    """
    previous = getattr(_dropout_local, "generator", None)
    _dropout_local.generator = np.random.default_rng(seed)
    try:
        yield _dropout_local.generator
    finally:
        _dropout_local.generator = previous


class Parameter(Tensor):
    def __init__(self, data):
        super(Parameter, self).__init__(data, requires_grad=True)


class Module:
    def __init__(self):
        self.training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for _, child in self.named_children():
            yield from child.modules()

    def train(self, mode=True):
        for module in self.modules():
            module.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())

    def load_state_dict(self, state, strict=True):
        """
        Copies arrays into same-named parameters.

        :return: (missing, unexpected) name lists
        """
        own = OrderedDict(self.named_parameters())
        missing = [name for name in own if name not in state]
        unexpected = [name for name in state if name not in own]
        if strict and (missing or unexpected):
            raise KeyError(f"missing={missing} unexpected={unexpected}")
        for name, array in state.items():
            if name not in own:
                continue
            param = own[name]
            if tuple(np.shape(array)) != param.shape:
                raise DimensionError(f"{name}: checkpoint shape {np.shape(array)} != model shape {param.shape}")
            param.data = np.array(array, dtype=param.dtype)
        return missing, unexpected


class ModuleList(Module):
    def __init__(self, modules=()):
        super(ModuleList, self).__init__()
        self._items = list(modules)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, index):
        return self._items[index]

    def named_children(self):
        for i, module in enumerate(self._items):
            yield str(i), module

    def named_parameters(self, prefix=""):
        for i, module in enumerate(self._items):
            yield from module.named_parameters(f"{prefix}{i}.")


def _zeros(*shape):
    # np.zeros maps pages lazily, so uninitialised presets stay cheap
    return np.zeros(shape, dtype=get_default_dtype())


class Linear(Module):
    """
    y = x W + b with W stored as [in_features, out_features].
    """

    def __init__(self, in_features, out_features, bias=True):
        super(Linear, self).__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(_zeros(in_features, out_features))
        self.bias = Parameter(_zeros(out_features)) if bias else None

    def reset_parameters(self, rng, std):
        self.weight.data = rng.normal(0.0, std, self.weight.shape).astype(self.weight.dtype)
        if self.bias is not None:
            self.bias.data = np.zeros_like(self.bias.data)

    def forward(self, x):
        out = x @ self.weight
        return out + self.bias if self.bias is not None else out


class Embedding(Module):
    def __init__(self, num_embeddings, embedding_dim):
        super(Embedding, self).__init__()
        self.num_embeddings = num_embeddings
        self.weight = Parameter(_zeros(num_embeddings, embedding_dim))

    def reset_parameters(self, rng, std):
        self.weight.data = rng.normal(0.0, std, self.weight.shape).astype(self.weight.dtype)

    def forward(self, ids):
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.num_embeddings):
            raise DimensionError(f"embedding index outside [0, {self.num_embeddings})")
        return self.weight[ids]


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        super(LayerNorm, self).__init__()
        self.eps = eps
        self.weight = Parameter(np.ones(dim, dtype=get_default_dtype()))
        self.bias = Parameter(_zeros(dim))

    def reset_parameters(self, rng, std):
        self.weight.data = np.ones_like(self.weight.data)
        self.bias.data = np.zeros_like(self.bias.data)

    def forward(self, x):
        return F.layer_norm(x, self.weight, self.bias, self.eps)


class Dropout(Module):
    def __init__(self, p, seed=0):
        super(Dropout, self).__init__()
        self.p = p
        self.generator = np.random.default_rng(seed)

    def forward(self, x):
        rng = getattr(_dropout_local, "generator", None) or self.generator
        return F.dropout(x, self.p, rng, self.training)
