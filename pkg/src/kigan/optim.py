from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError


@dataclass
class AdamState:
    """Moment buffers for a fixed, ordered list of parameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr=1e-3, **kw):
        state = cls(lr=lr, **kw)
        state.m = [np.zeros(p.shape) for p in params]
        state.v = [np.zeros(p.shape) for p in params]
        return state


def adam_step(params, grads, state):
    """Bias-corrected Adam update, in place on ``params[i].data``.

    A ``None`` gradient is treated as zero (the parameter still advances its
    moment decay).
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise DimensionError("adam_step: params, grads and state lengths differ")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros(p.shape)
        if g.shape != p.shape or m.shape != p.shape:
            raise DimensionError(f"adam_step: grad {g.shape} vs param {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


class Adam:
    """Convenience wrapper pairing a parameter list with its :class:`AdamState`."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = AdamState.for_params(self.params, lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state)
