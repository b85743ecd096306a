"""
Dense row-major tensors with reverse-mode automatic differentiation.

Every op computes its value eagerly with numpy and, when gradients are
enabled and some input requires them, records its inputs plus a closure
mapping the output gradient to one gradient per input. `ctal.tensor.autograd`
walks these records backwards.
"""
import contextlib
import threading

import numpy as np

from ctal.errors import DimensionError, NonFiniteError

_local = threading.local()
_default_dtype = [np.float32]


def get_default_dtype():
    return _default_dtype[0]


@contextlib.contextmanager
def default_dtype(dtype):
    """
    Switches the float width of newly created tensors, e.g. float64 for
    finite-difference checks.
    """
    previous = _default_dtype[0]
    _default_dtype[0] = np.dtype(dtype).type
    try:
        yield
    finally:
        _default_dtype[0] = previous


def is_grad_enabled():
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    previous = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


class Tensor:
    # Makes numpy defer to our reflected operators (np.float64(2) * t)
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or get_default_dtype())
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._op = "leaf"
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def check_finite(self, name="tensor"):
        if not np.all(np.isfinite(self.data)):
            bad = int(np.size(self.data) - np.count_nonzero(np.isfinite(self.data)))
            raise NonFiniteError(f"{name} holds {bad} non-finite values (shape {self.shape})")
        return self

    def backward(self, accumulate_into=None):
        from ctal.tensor.autograd import backward
        return backward(self, accumulate_into=accumulate_into)

    def __repr__(self):
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad}, op={self._op})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def abs(self):
        return abs_(self)

    def sqrt(self):
        return sqrt(self)


def as_tensor(value, like=None):
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(value, dtype=dtype)


def _result(data, parents, op, backward):
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data)
    out.grad = None
    out._op = op
    out.requires_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def unbroadcast(grad, shape):
    """
    Sums a broadcast gradient back down to `shape`.
    """
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def add(a, b):
    a, b = _pair(a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)
    return _result(a.data + b.data, (a, b), "add", backward)


def sub(a, b):
    a, b = _pair(a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)
    return _result(a.data - b.data, (a, b), "sub", backward)


def mul(a, b):
    a, b = _pair(a, b)

    def backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)
    return _result(a.data * b.data, (a, b), "mul", backward)


def div(a, b):
    a, b = _pair(a, b)

    def backward(g):
        return (unbroadcast(g / b.data, a.shape),
                unbroadcast(-g * a.data / (b.data * b.data), b.shape))
    return _result(a.data / b.data, (a, b), "div", backward)


def neg(a):
    return _result(-a.data, (a,), "neg", lambda g: (-g,))


def power(a, exponent):
    if isinstance(exponent, Tensor):
        raise TypeError("only scalar exponents are supported")

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1),)
    return _result(a.data ** exponent, (a,), "pow", backward)


def exp(a):
    out = np.exp(a.data)
    return _result(out, (a,), "exp", lambda g: (g * out,))


def log(a):
    return _result(np.log(a.data), (a,), "log", lambda g: (g / a.data,))


def sqrt(a):
    out = np.sqrt(a.data)
    return _result(out, (a,), "sqrt", lambda g: (g * 0.5 / out,))


def tanh(a):
    out = np.tanh(a.data)
    return _result(out, (a,), "tanh", lambda g: (g * (1.0 - out * out),))


def abs_(a):
    return _result(np.abs(a.data), (a,), "abs", lambda g: (g * np.sign(a.data),))


def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as e:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}") from e

    def backward(g):
        grad_a = np.matmul(g, np.swapaxes(b.data, -1, -2))
        grad_b = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(grad_a, a.shape), unbroadcast(grad_b, b.shape)
    return _result(out, (a, b), "matmul", backward)


def sum_(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)
    return _result(np.asarray(out), (a,), "sum", backward)


def mean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in axes]))
    return sum_(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape):
    return _result(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), "transpose", lambda g: (g.transpose(inverse),))


def take(a, index):
    """
    Indexing, including integer-array gathers such as embedding lookups.
    Repeated indices accumulate their gradients.
    """
    if isinstance(index, Tensor):
        index = index.data

    def backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, index, g)
        return (grad,)
    return _result(a.data[index], (a,), "index", backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))
    return _result(out, tensors, "concat", backward)


def where(condition, a, b):
    """
    Selects from `a` where the constant boolean `condition` holds, else `b`.
    """
    a, b = _pair(a, b)
    condition = np.asarray(condition, dtype=bool)

    def backward(g):
        return (unbroadcast(np.where(condition, g, 0.0), a.shape),
                unbroadcast(np.where(condition, 0.0, g), b.shape))
    return _result(np.where(condition, a.data, b.data), (a, b), "where", backward)
