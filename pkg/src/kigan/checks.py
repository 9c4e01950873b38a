"""Finite-difference suite over every primitive op and the end-to-end generator.

Ops are looked up on :mod:`kigan.tensor` at run time, so a patched op is the
one that gets checked.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .batch import collate
from .config import ModelConfig
from .data import SceneWindow, normalize
from .gan import Discriminator, Generator, best_of_k, generator_adversarial_loss, trajectory_displacements
from .gradcheck import grad_check
from .tensor import Tensor

PRIMITIVE_TOL = 1e-6
END_TO_END_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    seconds: float

    @property
    def ok(self):
        return bool(np.isfinite(self.error) and self.error <= self.tol)

    def line(self):
        status = "PASS" if self.ok else "FAIL"
        return f"{status} {self.name}: max relative error {self.error:.3e} (tol {self.tol:.0e}, {self.seconds:.2f}s)"


def _param(rng, *shape, away_from_zero=False):
    x = rng.uniform(-1.0, 1.0, size=shape)
    if away_from_zero:
        x = np.sign(x) * (0.2 + 0.8 * np.abs(x))
    return Tensor(x, requires_grad=True)


def _weighted(out, w):
    """Scalar ``sum(out * w)`` so every output element carries a distinct weight."""
    return T.tsum(T.elementwise("mul", out, Tensor(w)))


def primitive_checks(seed=0):
    """``(name, f, inputs)`` triples, one per differentiable op."""
    rng = np.random.default_rng(seed)
    checks = []

    def add(name, fn, inputs, out_shape):
        w = rng.standard_normal(out_shape)
        checks.append((name, lambda *xs, fn=fn, w=w: _weighted(fn(*xs), w), inputs))

    a, b = _param(rng, 3, 4), _param(rng, 3, 4)
    add("add", lambda x, y: T.elementwise("add", x, y), [a, b], (3, 4))
    a, b = _param(rng, 3, 4), _param(rng, 3, 4)
    add("sub", lambda x, y: T.elementwise("sub", x, y), [a, b], (3, 4))
    a, b = _param(rng, 3, 4), _param(rng, 3, 4)
    add("mul", lambda x, y: T.elementwise("mul", x, y), [a, b], (3, 4))
    for kind in ("tanh", "sigmoid", "exp"):
        add(kind, lambda x, kind=kind: T.elementwise(kind, x), [_param(rng, 3, 4)], (3, 4))
    add("relu", lambda x: T.elementwise("relu", x), [_param(rng, 3, 4, away_from_zero=True)], (3, 4))
    pos = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
    add("log", lambda x: T.elementwise("log", x), [pos], (3, 4))
    add("clip", lambda x: T.clip(x, -0.5, 0.5), [Tensor(np.array([[-0.9, -0.3, 0.1, 0.7]]), requires_grad=True)], (1, 4))
    add("matmul", T.matmul, [_param(rng, 3, 4), _param(rng, 4, 2)], (3, 2))
    add("linear", T.linear, [_param(rng, 3, 4), _param(rng, 4, 5), _param(rng, 5)], (3, 5))
    add("reshape", lambda x: T.reshape(x, (4, 3)), [_param(rng, 3, 4)], (4, 3))
    add("getitem", lambda x: T.getitem(x, (slice(None), slice(1, 3))), [_param(rng, 3, 4)], (3, 2))
    add("concat", lambda x, y: T.concat([x, y], axis=1), [_param(rng, 3, 2), _param(rng, 3, 3)], (3, 5))
    add("stack", lambda x, y: T.stack([x, y], axis=1), [_param(rng, 3, 2), _param(rng, 3, 2)], (3, 2, 2))
    idx = np.array([2, 0, 2, 1])
    add("take_rows", lambda x: T.take_rows(x, idx), [_param(rng, 3, 2)], (4, 2))
    add("embedding_lookup", lambda t: T.embedding_lookup(t, idx), [_param(rng, 3, 5)], (4, 5))
    add("sum", lambda x: T.tsum(x, axis=0), [_param(rng, 3, 4)], (4,))
    add("mean", lambda x: T.mean(x, axis=1), [_param(rng, 3, 4)], (3,))
    add("softmax", lambda x: T.softmax(x, axis=1), [_param(rng, 3, 4)], (3, 4))
    add("max_pool_rows", T.max_pool_rows, [_param(rng, 4, 3)], (3,))
    add("row_norm", T.row_norm, [_param(rng, 3, 4)], (3,))
    seg = np.array([0, 0, 1, 2, 2, 2])
    add("segment_sum", lambda x: T.segment_sum(x, seg, 4), [_param(rng, 6, 3)], (4, 3))
    add("segment_softmax", lambda x: T.segment_softmax(x, seg, 4), [_param(rng, 6, 3)], (6, 3))
    add("segment_max", lambda x: T.segment_max(x, seg, 4), [_param(rng, 6, 3)], (4, 3))
    d_in, d_h = 3, 4
    w_h = rng.standard_normal((2, d_h))
    w_c = rng.standard_normal((2, d_h))

    def lstm(x, h, c, wx, wh, bias):
        h2, c2 = T.lstm_step(x, h, c, wx, wh, bias)
        return T.elementwise("add", _weighted(h2, w_h), _weighted(c2, w_c))

    checks.append(
        (
            "lstm_step",
            lstm,
            [_param(rng, 2, d_in), _param(rng, 2, d_h), _param(rng, 2, d_h),
             _param(rng, d_in, 4 * d_h), _param(rng, d_h, 4 * d_h), _param(rng, 4 * d_h)],
        )
    )
    return checks


TOY_MODEL = dict(
    d_h=4, d_attr=2, d_size=2, d_traffic=2, d_embed=3, d_rel=3, d_pool=4, d_z=2,
    d_dec=4, d_disc=4, attn_hidden=4, pool_hidden=5, disc_hidden=4,
)


def toy_scene(seed=0, obs_len=3, pred_len=2):
    """Two moving agents with distinct classes and a signal change mid-window."""
    rng = np.random.default_rng(seed)
    L = obs_len + pred_len
    start = np.array([[0.0, -30.0], [3.5, 25.0]])
    vel = np.array([[0.4, 9.0], [-0.3, -7.5]])
    t = np.arange(L) * 0.5
    pos = start[:, None, :] + vel[:, None, :] * t[None, :, None] + rng.normal(0, 0.2, size=(2, L, 2))
    velocities = np.repeat(vel[:, None, :], L, axis=1) + rng.normal(0, 0.3, size=(2, L, 2))
    acc = rng.normal(0, 0.5, size=(2, L, 2))
    window = SceneWindow(
        obs_len=obs_len,
        pred_len=pred_len,
        agent_ids=["a", "b"],
        classes=np.array([0, 2]),
        dims=np.array([[4.5, 1.8], [10.0, 2.5]]),
        positions=pos,
        velocities=velocities,
        accelerations=acc,
        signals=np.array([1] * (L - 2) + [2, 2]),
        is_target=np.array([True, True]),
        anchor=pos[:, obs_len - 1].copy(),
    )
    return normalize(window)[0]


def end_to_end_checks(seed=0, model=None, k=2):
    """Composite checks over every generator parameter at once."""
    cfg = ModelConfig(**(model or TOY_MODEL))
    rng = np.random.default_rng(seed)
    gen = Generator(cfg, rng)
    disc = Discriminator(cfg, rng)
    batch = collate([toy_scene(seed)])
    noise = rng.standard_normal((batch.n_agents * k, cfg.d_z))
    names = [n for n, _ in gen.named_parameters()]
    params = gen.parameters()

    # grad_check perturbs its inputs in place, so the generator's own
    # parameter tensors are the inputs and the closures ignore their arguments.
    def variety(*_):
        rel = gen(batch, noise, k=k)
        v, _ = best_of_k(batch.future, rel, k)
        return T.mean(v)

    noise1 = noise[::k]

    def adversarial(*_):
        fake = gen(batch, noise1)
        return generator_adversarial_loss(disc(trajectory_displacements(batch.obs_pos, fake)))

    for p in disc.parameters():
        p.requires_grad = False
    return [("generator+variety", variety, params), ("generator+discriminator+g_loss", adversarial, params)], names


def run_suite(seed=0, include_end_to_end=True):
    results = []
    for name, f, inputs in primitive_checks(seed):
        t0 = time.perf_counter()
        try:
            err = grad_check(f, inputs)
        except Exception:  # a broken op is reported, not raised
            err = float("inf")
        results.append(CheckResult(name, err, PRIMITIVE_TOL, time.perf_counter() - t0))
    if include_end_to_end:
        checks, _ = end_to_end_checks(seed)
        for name, f, inputs in checks:
            t0 = time.perf_counter()
            try:
                err = grad_check(f, inputs)
            except Exception:
                err = float("inf")
            results.append(CheckResult(name, err, END_TO_END_TOL, time.perf_counter() - t0))
    return results
