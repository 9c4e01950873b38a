"""Central finite-difference checks against tape gradients."""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteError
from .tensor import GradTape, Tensor, no_grad


def relative_error(analytic, numeric, floor=1e-4):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``.

    Below ``floor`` the comparison is effectively absolute; otherwise central
    differences of near-zero gradients are dominated by round-off.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def _scalar(f, inputs):
    with no_grad():
        out = f(*inputs)
    val = float(out.data.reshape(-1)[0]) if isinstance(out, Tensor) else float(out)
    if not np.isfinite(val):
        raise NonFiniteError("grad_check", "f(x) is not finite")
    return val


def tape_gradients(f, inputs):
    for x in inputs:
        x.grad = None
    with GradTape() as tape:
        out = f(*inputs)
    if not np.isfinite(out.data).all():
        raise NonFiniteError("grad_check", "f(x) is not finite")
    tape.backward(out)
    grads = [np.zeros(x.shape) if x.grad is None else x.grad for x in inputs]
    for x in inputs:
        x.grad = None
    return grads


def numeric_gradients(f, inputs, h=1e-5):
    grads = []
    for x in inputs:
        g = np.zeros(x.shape)
        flat = x.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = _scalar(f, inputs)
            flat[i] = orig - h
            fm = _scalar(f, inputs)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def grad_check(f, x, h=1e-5, floor=1e-4):
    """Max relative error between tape and central-difference gradients.

    ``x`` is one tensor or a list of tensors; ``f`` takes them positionally and
    returns a scalar tensor.
    """
    inputs = [x] if isinstance(x, Tensor) else list(x)
    _scalar(f, inputs)
    analytic = tape_gradients(f, inputs)
    numeric = numeric_gradients(f, inputs, h)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        if a.size:
            worst = max(worst, float(relative_error(a, n, floor).max()))
    return worst
