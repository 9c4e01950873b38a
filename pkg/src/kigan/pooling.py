"""Interaction pooling: vehicular attention pooling and two baselines.

All three methods share one call signature::

    pool(positions, velocities, hidden, pair_i, pair_j) -> Tensor[n, d_pool]

``positions`` and ``velocities`` are absolute, final-observed-frame numpy
arrays ``[n, 2]``; ``hidden`` is a ``[n, d]`` tensor. Pairs list every
ordered neighbour relation (i != j) and must be sorted by ``i``. An agent with
no neighbours pools to the zero vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .nn import MLP, Linear, Module
from .tensor import Tensor, concat, reshape, segment_max, segment_softmax, segment_sum, take_rows


@dataclass
class PoolingInput:
    positions: np.ndarray
    velocities: np.ndarray
    hidden: Tensor

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.velocities = np.asarray(self.velocities, dtype=np.float64)
        n = len(self.positions)
        if n < 1 or len(self.velocities) != n or self.hidden.shape[0] != n:
            raise DimensionError("pooling input lists must be non-empty and equally long")

    @property
    def n_agents(self):
        return len(self.positions)


def all_pairs(n):
    """Every ordered pair (i, j), i != j, sorted by i then j."""
    a, b = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    keep = a != b
    return a[keep].astype(np.intp), b[keep].astype(np.intp)


def relative_positions(positions, pair_i=None, pair_j=None):
    """``p_i - p_j`` for every listed pair (default: all ordered pairs)."""
    positions = np.asarray(positions, dtype=np.float64)
    if pair_i is None:
        pair_i, pair_j = all_pairs(len(positions))
    return positions[pair_i] - positions[pair_j]


class VehicularAttentionPool(Module):
    """Attention over neighbours from relative-position and velocity embeddings.

    ``attention='channel'`` normalizes each feature channel across neighbours;
    ``'scalar'`` uses one weight per neighbour broadcast over channels.
    """

    def __init__(self, cfg, d_hidden, rng):
        self._cfg = cfg
        self._d_hidden = d_hidden
        self.spatial = Linear(2, cfg.d_rel, rng)
        self.velocity = Linear(2, cfg.d_rel, rng)
        width = d_hidden if cfg.attention == "channel" else 1
        self.attention = MLP([2 * cfg.d_rel, cfg.attn_hidden, width], rng, final_activation=False)
        self.mlp = MLP([cfg.d_rel + d_hidden, cfg.pool_hidden, cfg.d_pool], rng)

    def embed_pair(self, rel):
        return self.spatial(Tensor(np.asarray(rel) / self._cfg.rel_scale)).relu()

    def embed_velocity(self, vel):
        return self.velocity(Tensor(np.asarray(vel) / self._cfg.vel_scale)).relu()

    def attention_weights(self, e_pair, v_self, pair_i, n):
        scores = self.attention(concat([e_pair, v_self], axis=1))
        w = segment_softmax(scores, pair_i, n)
        if self._cfg.attention == "scalar":
            w = w @ Tensor(np.ones((1, self._d_hidden)))
        return w

    def __call__(self, positions, velocities, hidden, pair_i, pair_j):
        n = hidden.shape[0]
        if len(pair_i) == 0:
            return Tensor(np.zeros((n, self._cfg.d_pool)))
        e = self.embed_pair(relative_positions(positions, pair_i, pair_j))
        v = take_rows(self.embed_velocity(velocities), pair_i)
        w = self.attention_weights(e, v, pair_i, n)
        src = pair_j if self._cfg.attend_to == "neighbor" else pair_i
        weighted = take_rows(hidden, src) * w
        return segment_max(self.mlp(concat([e, weighted], axis=1)), pair_i, n)


class HiddenStatePool(Module):
    """Per-pair MLP over [relative-position embedding ; neighbour hidden state], max-pooled."""

    def __init__(self, cfg, d_hidden, rng):
        self._cfg = cfg
        self.spatial = Linear(2, cfg.d_rel, rng)
        self.mlp = MLP([cfg.d_rel + d_hidden, cfg.pool_hidden, cfg.d_pool], rng)

    def __call__(self, positions, velocities, hidden, pair_i, pair_j):
        n = hidden.shape[0]
        if len(pair_i) == 0:
            return Tensor(np.zeros((n, self._cfg.d_pool)))
        rel = relative_positions(positions, pair_i, pair_j) / self._cfg.rel_scale
        e = self.spatial(Tensor(rel)).relu()
        return segment_max(self.mlp(concat([e, take_rows(hidden, pair_j)], axis=1)), pair_i, n)


class SocialGridPool(Module):
    """Sum neighbour hidden states into a square occupancy grid centred on each agent.

    The grid has ``social_grid`` cells of ``social_cell`` metres per side; the
    flattened grid goes through a bias-free linear layer and ReLU, so an empty
    grid pools to zero.
    """

    def __init__(self, cfg, d_hidden, rng):
        self._cfg = cfg
        self._d_hidden = d_hidden
        g = cfg.social_grid
        self.project = Linear(g * g * d_hidden, cfg.d_pool, rng, bias=False)

    def cells(self, positions, pair_i, pair_j):
        """Flat cell index of neighbour j around agent i, or -1 outside the grid."""
        g, size = self._cfg.social_grid, self._cfg.social_cell
        rel = np.asarray(positions)[pair_j] - np.asarray(positions)[pair_i]
        idx = np.floor(rel / size + g / 2.0).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < g), axis=1)
        return np.where(inside, idx[:, 1] * g + idx[:, 0], -1)

    def __call__(self, positions, velocities, hidden, pair_i, pair_j):
        n = hidden.shape[0]
        g2 = self._cfg.social_grid ** 2
        if len(pair_i) == 0:
            return Tensor(np.zeros((n, self._cfg.d_pool)))
        cell = self.cells(positions, pair_i, pair_j)
        keep = cell >= 0
        if not keep.any():
            return Tensor(np.zeros((n, self._cfg.d_pool)))
        slots = pair_i[keep] * g2 + cell[keep]
        grid = segment_sum(take_rows(hidden, pair_j[keep]), slots, n * g2)
        return self.project(reshape(grid, (n, g2 * self._d_hidden))).relu()


POOLERS = {"vap": VehicularAttentionPool, "social": SocialGridPool, "hidden": HiddenStatePool}


def make_pooler(cfg, d_hidden, rng):
    return POOLERS[cfg.pooling](cfg, d_hidden, rng)


def pool(pooler, inp, pair_i=None, pair_j=None):
    """Pool a single scene given a :class:`PoolingInput`."""
    if pair_i is None:
        pair_i, pair_j = all_pairs(inp.n_agents)
    return pooler(inp.positions, inp.velocities, inp.hidden, pair_i, pair_j)
