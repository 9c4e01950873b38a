"""Parameter containers and the layers built from them."""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, embedding_lookup, linear, lstm_step


def uniform_init(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Module:
    """Walks attributes to find parameters, in definition order."""

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self):
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True):
        self.weight = uniform_init(rng, (d_in, d_out), d_in)
        self.bias = uniform_init(rng, (d_out,), d_in) if bias else None

    def __call__(self, x):
        return linear(x, self.weight, self.bias)


class MLP(Module):
    """Stack of Linear layers, each followed by ReLU."""

    def __init__(self, widths, rng, final_activation=True):
        self._n = len(widths) - 1
        self._final = final_activation
        for k, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            setattr(self, f"layer{k}", Linear(a, b, rng))

    def __call__(self, x):
        for k in range(self._n):
            x = getattr(self, f"layer{k}")(x)
            if k < self._n - 1 or self._final:
                x = x.relu()
        return x


class Embedding(Module):
    def __init__(self, vocab, dim, rng):
        self.table = uniform_init(rng, (vocab, dim), 1)

    def __call__(self, index):
        return embedding_lookup(self.table, index)


class LSTMCell(Module):
    """Gate order: input, forget, candidate, output."""

    def __init__(self, d_in, d_h, rng):
        self.d_h = d_h
        self.w_x = uniform_init(rng, (d_in, 4 * d_h), d_h)
        self.w_h = uniform_init(rng, (d_h, 4 * d_h), d_h)
        self.bias = uniform_init(rng, (4 * d_h,), d_h)

    def __call__(self, x, h, c):
        return lstm_step(x, h, c, self.w_x, self.w_h, self.bias)

    def zero_state(self, n):
        z = np.zeros((n, self.d_h))
        return Tensor(z), Tensor(z)


def zero_parameters(module):
    for p in module.parameters():
        p.data[...] = 0.0
