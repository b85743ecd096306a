"""
Central finite-difference checks for the autodiff engine. Run them under
`default_dtype(np.float64)`; float32 rounding swamps a 1e-5 step.
"""
import numpy as np

from ctal.tensor.autograd import backward
from ctal.tensor.tensor import no_grad


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def numerical_gradient(f, tensor, h=1e-5, indices=None):
    """
    d f() / d tensor by central differences, perturbing `tensor.data` in
    place. Only the flat positions in `indices` are perturbed when given.
    """
    flat = tensor.data.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    grads = []
    with no_grad():
        for i in indices:
            original = flat[i]
            flat[i] = original + h
            plus = float(f().item())
            flat[i] = original - h
            minus = float(f().item())
            flat[i] = original
            grads.append((plus - minus) / (2.0 * h))
    return np.asarray(grads)


def gradcheck(f, inputs, h=1e-5, max_entries=None, seed=0):
    """
    Compares the analytic gradient of the scalar `f()` with central
    differences for every tensor in `inputs`.

    :param f: zero-argument callable building the loss from `inputs`
    :param inputs: dict name -> Tensor (requires_grad leaves)
    :param max_entries: check at most this many random entries per tensor
    :return: dict name -> relative error
    """
    for tensor in inputs.values():
        if tensor.dtype != np.float64:
            raise TypeError("gradcheck needs float64 tensors")
        tensor.grad = None
    backward(f())

    rng = np.random.default_rng(seed)
    errors = {}
    for name, tensor in inputs.items():
        analytic = tensor.grad.reshape(-1) if tensor.grad is not None else np.zeros(tensor.size)
        indices = np.arange(tensor.size)
        if max_entries is not None and tensor.size > max_entries:
            indices = np.sort(rng.choice(tensor.size, size=max_entries, replace=False))
        numeric = numerical_gradient(f, tensor, h, indices)
        errors[name] = relative_error(analytic[indices], numeric)
    return errors
