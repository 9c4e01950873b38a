"""Displacement metrics and the best-of-k evaluation protocol."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .batch import collate
from .errors import DataError, DimensionError
from .gan import noise_stream
from .tensor import no_grad

EVAL_CHUNK = 32


def _pair(truth, pred):
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.ndim == 2 and pred.ndim == 2:
        truth, pred = truth[None], pred[None]
    if truth.shape != pred.shape or truth.ndim != 3 or truth.shape[-1] != 2:
        raise DimensionError(f"trajectory sets differ: {truth.shape} vs {pred.shape}")
    if truth.shape[0] == 0 or truth.shape[1] == 0:
        raise DimensionError("trajectory sets must be non-empty")
    return truth, pred


def point_errors(truth, pred):
    truth, pred = _pair(truth, pred)
    return np.linalg.norm(pred - truth, axis=-1)


def ade(truth, pred):
    """Mean over trajectories of the mean per-step Euclidean error."""
    return float(point_errors(truth, pred).mean(axis=1).mean())


def fde(truth, pred):
    """Mean over trajectories of the final-step Euclidean error."""
    return float(point_errors(truth, pred)[:, -1].mean())


@dataclass
class PredictionSet:
    """Sampled futures for the agents of one window, in absolute coordinates."""

    agent_ids: list
    truth: np.ndarray  # [n, T, 2]
    futures: np.ndarray  # [n, k, T, 2]
    distances: np.ndarray  # [n, k]
    best: np.ndarray  # [n]
    is_target: np.ndarray

    @property
    def selected(self):
        return self.futures[np.arange(len(self.best)), self.best]


def sample_noise(seed, window_index, n_agents, k, d_z):
    """Noise ``[n_agents * k, d_z]``, agent-major; sample ``s`` depends only on ``(seed, window, s)``.

    Sample sets therefore nest: the first ``k`` samples are shared by every
    larger ``k``.
    """
    draws = np.stack([noise_stream(seed, window_index, s).standard_normal((n_agents, d_z)) for s in range(k)])
    return draws.transpose(1, 0, 2).reshape(n_agents * k, d_z)


def predict(gen, windows, k, seed, first_index=0):
    """Draw ``k`` futures per agent for each window and select the best by full-trajectory L2."""
    if not windows:
        raise DataError("predict needs at least one window")
    if k < 1:
        raise DimensionError("k must be >= 1")
    d_z = gen.cfg.d_z
    out = []
    for start in range(0, len(windows), EVAL_CHUNK):
        chunk = windows[start : start + EVAL_CHUNK]
        batch = collate(chunk)
        noise = np.concatenate(
            [sample_noise(seed, first_index + start + i, w.n_agents, k, d_z) for i, w in enumerate(chunk)]
        )
        with no_grad():
            rel = gen(batch, noise, k=k).data
        T = batch.pred_len
        rel = rel.reshape(batch.n_agents, k, T, 2)
        row = 0
        for w in chunk:
            n = w.n_agents
            anchor = batch.anchor[row : row + n]
            futures = rel[row : row + n] + anchor[:, None, None, :]
            truth = batch.future[row : row + n] + anchor[:, None, :]
            dist = np.sqrt(((futures - truth[:, None]) ** 2).sum(axis=(2, 3)))
            out.append(
                PredictionSet(
                    agent_ids=list(w.agent_ids),
                    truth=truth,
                    futures=futures,
                    distances=dist,
                    best=dist.argmin(axis=1),
                    is_target=w.is_target.copy(),
                )
            )
            row += n
    return out


@dataclass
class MetricReport:
    ade: float
    fde: float
    k: int
    pred_len: int
    pooling: str = "vap"
    mask: dict = field(default_factory=dict)
    n_agents: int = 0
    n_windows: int = 0
    per_scene: list = field(default_factory=list)

    CSV_FIELDS = ("pooling", "mask", "pred_len", "k", "n_windows", "n_agents", "ade", "fde")

    def __post_init__(self):
        if self.ade < 0 or self.fde < 0:
            raise DimensionError("metrics must be non-negative")

    def mask_label(self):
        off = [name for name, on in sorted(self.mask.items()) if on]
        return "+".join(off) if off else "none"

    def to_json(self):
        return json.dumps(asdict(self), indent=2)

    def csv_row(self, header=True):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(self.CSV_FIELDS)
        w.writerow(
            [self.pooling, self.mask_label(), self.pred_len, self.k, self.n_windows, self.n_agents, repr(self.ade), repr(self.fde)]
        )
        return buf.getvalue()


def evaluate(gen, windows, k=12, seed=0):
    """Best-of-k ADE/FDE over the target agents of ``windows``.

    Each agent keeps the one sample closest to the truth over the whole
    horizon; both ADE and FDE are measured on that sample.
    """
    if not windows:
        raise DataError("evaluate needs at least one window")
    preds = predict(gen, windows, k, seed)
    per_agent_ade, per_agent_fde, per_scene = [], [], []
    for i, (w, p) in enumerate(zip(windows, preds)):
        tgt = p.is_target
        if not tgt.any():
            continue
        err = point_errors(p.truth[tgt], p.selected[tgt])
        a, f = err.mean(axis=1), err[:, -1]
        per_agent_ade.append(a)
        per_agent_fde.append(f)
        per_scene.append(
            dict(index=i, source=w.source, start_frame=int(w.start_frame), n_agents=int(tgt.sum()),
                 ade=float(a.mean()), fde=float(f.mean()))
        )
    if not per_agent_ade:
        raise DataError("no target agents to evaluate")
    a = np.concatenate(per_agent_ade)
    f = np.concatenate(per_agent_fde)
    cfg = gen.cfg
    return MetricReport(
        ade=float(a.mean()),
        fde=float(f.mean()),
        k=int(k),
        pred_len=int(windows[0].pred_len),
        pooling=cfg.pooling,
        mask=dict(motion=cfg.mask_motion, physical=cfg.mask_physical, traffic=cfg.mask_traffic),
        n_agents=int(a.size),
        n_windows=len(windows),
        per_scene=per_scene,
    )


PREDICTION_COLUMNS = ("agent_id", "step", "x_true", "y_true", "x_pred", "y_pred")


def predictions_csv(pred):
    """One window's selected futures, one row per agent and step (steps count from 1)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PREDICTION_COLUMNS)
    sel = pred.selected
    for a, agent in enumerate(pred.agent_ids):
        for t in range(sel.shape[1]):
            w.writerow([agent, t + 1, repr(float(pred.truth[a, t, 0])), repr(float(pred.truth[a, t, 1])),
                        repr(float(sel[a, t, 0])), repr(float(sel[a, t, 1]))])
    return buf.getvalue()
