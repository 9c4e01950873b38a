"""Trajectory, motion, physical-attribute and traffic encoders.

Every encoder works on a batch of agents (rows). The single-agent helpers at
the bottom accept one agent's sequence and return a vector.
"""

from __future__ import annotations

import numpy as np

from .data import AgentClass, validate_code
from .errors import AgentClassError, DimensionError
from .nn import Embedding, Linear, LSTMCell, Module
from .tensor import Tensor, concat, mean, stack


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class RecurrentEncoder(Module):
    """Linear+ReLU step embedding followed by an LSTM; returns the final hidden state."""

    def __init__(self, d_in, d_embed, d_h, rng):
        self.embed = Linear(d_in, d_embed, rng)
        self.cell = LSTMCell(d_embed, d_h, rng)

    def __call__(self, seq):
        seq = _as_tensor(seq)
        if seq.ndim != 3:
            raise DimensionError(f"recurrent encoder expects [agents, steps, features], got {seq.shape}")
        h, c = self.cell.zero_state(seq.shape[0])
        for t in range(seq.shape[1]):
            x = self.embed(seq[:, t]).relu()
            h, c = self.cell(x, h, c)
        return h


class PhysicalEncoder(Module):
    def __init__(self, cfg, rng):
        self.type_embed = Embedding(cfg.n_classes, cfg.d_attr, rng)
        self.size = Linear(2, cfg.d_size, rng)
        self._scale = cfg.size_scale

    def __call__(self, classes, dims):
        classes = np.asarray(classes)
        if classes.size and (classes.min() < 0 or classes.max() >= self.type_embed.table.shape[0]):
            raise AgentClassError(f"class index outside vocabulary: {classes}")
        return concat([self.type_embed(classes), self.size(Tensor(np.asarray(dims) / self._scale))], axis=1)


class TrafficEncoder(Module):
    def __init__(self, cfg, rng):
        self.embed = Embedding(cfg.n_codes, cfg.d_traffic, rng)
        self._mode = cfg.traffic_mode

    def __call__(self, codes):
        """``codes`` is ``[agents, obs_len]``; uses the final column unless mode is 'mean'."""
        codes = np.asarray(codes)
        for c in np.unique(codes):
            validate_code(int(c))
        if self._mode == "final":
            return self.embed(codes[:, -1] - 1)
        rows = [self.embed(codes[:, t] - 1) for t in range(codes.shape[1])]
        return mean(stack(rows, axis=0), axis=0)


class KnowledgeEncoders(Module):
    def __init__(self, cfg, rng):
        self._cfg = cfg
        self.trajectory = RecurrentEncoder(2, cfg.d_embed, cfg.d_h, rng)
        self.motion = RecurrentEncoder(4, cfg.d_embed, cfg.d_h, rng)
        self.physical = PhysicalEncoder(cfg, rng)
        self.traffic = TrafficEncoder(cfg, rng)

    def trajectory_input(self, batch):
        cfg = self._cfg
        src = batch.obs_disp if cfg.traj_input == "displacement" else batch.obs_pos
        return src / cfg.disp_scale

    def motion_input(self, batch):
        cfg = self._cfg
        kin = batch.obs_kin.copy()
        kin[..., :2] /= cfg.vel_scale
        kin[..., 2:] /= cfg.acc_scale
        return kin

    def __call__(self, batch):
        """Return ``(combined, traffic)``; masked encoders contribute zeros of full width."""
        cfg = self._cfg
        n = batch.n_agents
        e_traj = self.trajectory(self.trajectory_input(batch))
        if cfg.mask_motion:
            e_motion = Tensor(np.zeros((n, cfg.d_h)))
        else:
            e_motion = self.motion(self.motion_input(batch))
        if cfg.mask_physical:
            e_phy = Tensor(np.zeros((n, cfg.phy_width)))
        else:
            e_phy = self.physical(batch.classes, batch.dims)
        if cfg.mask_traffic:
            e_traffic = Tensor(np.zeros((n, cfg.d_traffic)))
        else:
            e_traffic = self.traffic(batch.codes)
        return combine(e_traj, e_motion, e_phy, cfg), e_traffic


def combine(e_traj, e_motion, e_phy, cfg=None):
    """Concatenate ``[trajectory ; motion ; physical]`` per agent."""
    parts = [e_traj, e_motion, e_phy]
    squeeze = all(p.ndim == 1 for p in parts)
    if squeeze:
        parts = [p.reshape(1, -1) for p in parts]
    if any(p.ndim != 2 for p in parts) or len({p.shape[0] for p in parts}) != 1:
        raise DimensionError(f"combine: incompatible shapes {[p.shape for p in parts]}")
    if cfg is not None:
        want = (cfg.d_h, cfg.d_h, cfg.phy_width)
        got = tuple(p.shape[1] for p in parts)
        if got != want:
            raise DimensionError(f"combine: segment widths {got} != configured {want}")
    out = concat(parts, axis=1)
    return out.reshape(-1) if squeeze else out


# ---------------------------------------------------------------- single agent


def _check_len(seq, expected, what):
    if expected is not None and len(seq) != expected:
        raise DimensionError(f"{what}: sequence length {len(seq)} != {expected}")


def encode_trajectory(displacements, encoder, obs_len=None):
    seq = np.asarray(displacements, dtype=np.float64)
    _check_len(seq, obs_len, "encode_trajectory")
    return encoder(seq[None]).reshape(-1)


def encode_motion(kinematics, encoder, obs_len=None):
    seq = np.asarray(kinematics, dtype=np.float64)
    _check_len(seq, obs_len, "encode_motion")
    if seq.ndim != 2 or seq.shape[1] != 4:
        raise DimensionError(f"encode_motion expects [steps, 4], got {seq.shape}")
    return encoder(seq[None]).reshape(-1)


def encode_physical(agent_class, length, width, encoder):
    if not isinstance(agent_class, AgentClass):
        agent_class = AgentClass.parse(agent_class)
    if length <= 0 or width <= 0:
        raise DimensionError("encode_physical needs positive dimensions")
    return encoder(np.array([agent_class.index]), np.array([[length, width]])).reshape(-1)


def encode_traffic(code, encoder):
    validate_code(code)
    return encoder.embed(np.array([code - 1])).reshape(-1)
