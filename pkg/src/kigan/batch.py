"""Collate normalized scene windows into flat per-agent arrays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError


@dataclass
class SceneBatch:
    """All agents of several windows stacked along one row axis.

    ``pair_i``/``pair_j`` enumerate ordered neighbour pairs (i != j, same
    scene), sorted by ``i``. Positions are relative to each agent's anchor.
    """

    obs_len: int
    pred_len: int
    scene: np.ndarray
    n_scenes: int
    obs_pos: np.ndarray
    obs_disp: np.ndarray
    obs_kin: np.ndarray
    classes: np.ndarray
    dims: np.ndarray
    codes: np.ndarray
    anchor: np.ndarray
    last_vel: np.ndarray
    future: np.ndarray
    is_target: np.ndarray
    pair_i: np.ndarray
    pair_j: np.ndarray

    @property
    def n_agents(self):
        return len(self.scene)

    @property
    def last_disp(self):
        return self.obs_disp[:, -1]


def displacements(positions):
    """Per-step displacement along axis 1, with a zero first step."""
    d = np.zeros_like(positions)
    d[:, 1:] = positions[:, 1:] - positions[:, :-1]
    return d


def scene_pairs(scene):
    """Ordered pairs (i, j), i != j, of rows sharing a scene id; sorted by i then j."""
    scene = np.asarray(scene)
    pi, pj = [], []
    for s in np.unique(scene):
        rows = np.nonzero(scene == s)[0]
        if len(rows) < 2:
            continue
        a, b = np.meshgrid(rows, rows, indexing="ij")
        keep = a != b
        pi.append(a[keep])
        pj.append(b[keep])
    if not pi:
        return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
    pi, pj = np.concatenate(pi), np.concatenate(pj)
    order = np.lexsort((pj, pi))
    return pi[order].astype(np.intp), pj[order].astype(np.intp)


def collate(windows):
    if not windows:
        raise DataError("cannot collate zero windows")
    obs_len, pred_len = windows[0].obs_len, windows[0].pred_len
    for w in windows:
        if (w.obs_len, w.pred_len) != (obs_len, pred_len):
            raise DimensionError("windows in one batch must share obs_len and pred_len")
        if not w.normalized:
            raise DataError("collate expects normalized windows")
    scene = np.concatenate([np.full(w.n_agents, k) for k, w in enumerate(windows)])
    pos = np.concatenate([w.positions for w in windows])
    vel = np.concatenate([w.velocities for w in windows])
    acc = np.concatenate([w.accelerations for w in windows])
    obs_pos = pos[:, :obs_len]
    pi, pj = scene_pairs(scene)
    return SceneBatch(
        obs_len=obs_len,
        pred_len=pred_len,
        scene=scene,
        n_scenes=len(windows),
        obs_pos=obs_pos,
        obs_disp=displacements(obs_pos),
        obs_kin=np.concatenate([vel[:, :obs_len], acc[:, :obs_len]], axis=2),
        classes=np.concatenate([w.classes for w in windows]),
        dims=np.concatenate([w.dims for w in windows]),
        codes=np.concatenate([np.tile(w.signals[:obs_len], (w.n_agents, 1)) for w in windows]),
        anchor=np.concatenate([w.anchor for w in windows]),
        last_vel=vel[:, obs_len - 1].copy(),
        future=pos[:, obs_len:].copy(),
        is_target=np.concatenate([w.is_target for w in windows]),
        pair_i=pi,
        pair_j=pj,
    )
