"""Encoder-mask and pooling sweeps with percentage deltas against the full model."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

import numpy as np

from .config import TrainConfig
from .evaluation import evaluate
from .training import Trainer

# (label, motion, physical, traffic); trajectory is always on.
ENCODER_ROWS = (
    ("no_traffic", True, True, False),
    ("no_physical", True, False, True),
    ("no_motion", False, True, True),
    ("full", True, True, True),
)
POOLING_ROWS = ("social", "hidden", "vap")


@dataclass
class AblationResult:
    label: str
    pooling: str
    motion: bool
    physical: bool
    traffic: bool
    pred_len: int
    ade: list
    fde: list

    @property
    def ade_median(self):
        return float(np.median(self.ade))

    @property
    def fde_median(self):
        return float(np.median(self.fde))


def variant_config(base: TrainConfig, pooling="vap", motion=True, physical=True, traffic=True, pred_len=None, seed=None):
    model = replace(
        base.model, pooling=pooling, mask_motion=not motion, mask_physical=not physical, mask_traffic=not traffic
    )
    return replace(
        base,
        model=model,
        pred_len=base.pred_len if pred_len is None else pred_len,
        seed=base.seed if seed is None else seed,
    ).validate()


def train_and_score(train_windows, val_windows, config):
    trainer = Trainer(config)
    trainer.fit(train_windows)
    report = evaluate(trainer.generator, val_windows, config.eval_k, config.eval_seed)
    return report.ade, report.fde


def run_variant(train_windows, val_windows, base, seeds, label, pooling="vap", motion=True, physical=True, traffic=True):
    ades, fdes = [], []
    pred_len = train_windows[0].pred_len
    for s in seeds:
        cfg = variant_config(base, pooling, motion, physical, traffic, pred_len=pred_len, seed=s)
        a, f = train_and_score(train_windows, val_windows, cfg)
        ades.append(a)
        fdes.append(f)
    return AblationResult(label, pooling, motion, physical, traffic, pred_len, ades, fdes)


def run_ablation(train_windows, val_windows, base: TrainConfig, seeds=(0,), sweeps=("encoders", "pooling")):
    """Train every variant once per seed; the full model is shared by both sweeps."""
    full = run_variant(train_windows, val_windows, base, seeds, "full")
    encoders, pooling = [], []
    if "encoders" in sweeps:
        for label, motion, physical, traffic in ENCODER_ROWS[:-1]:
            encoders.append(run_variant(train_windows, val_windows, base, seeds, label, "vap", motion, physical, traffic))
        encoders.append(full)
    if "pooling" in sweeps:
        for method in POOLING_ROWS[:-1]:
            pooling.append(run_variant(train_windows, val_windows, base, seeds, method, method))
        pooling.append(replace(full, label="vap"))
    return encoders, pooling


def format_delta(value, reference):
    """``0.52 (↑ 940.0 %)`` relative to ``reference``."""
    if reference == 0:
        return f"{value:.2f}"
    pct = (value - reference) / reference * 100.0
    arrow = "↑" if pct >= 0 else "↓"
    return f"{value:.2f} ({arrow} {abs(pct):.1f} %)"


def _cell(res, full, metric):
    value = getattr(res, f"{metric}_median")
    if res.label in ("full", "vap"):
        return f"{value:.2f}"
    return format_delta(value, getattr(full, f"{metric}_median"))


def _mark(on):
    return "yes" if on else "no"


def encoder_table(rows_by_horizon):
    """CSV mirroring the encoder-ablation layout; one ADE/FDE column pair per horizon."""
    horizons = sorted(rows_by_horizon)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["trajectory", "motion", "physical", "traffic"]
    for h in horizons:
        header += [f"ade_{h}", f"fde_{h}"]
    w.writerow(header)
    first = rows_by_horizon[horizons[0]]
    for i, res in enumerate(first):
        row = ["yes", _mark(res.motion), _mark(res.physical), _mark(res.traffic)]
        for h in horizons:
            rows = rows_by_horizon[h]
            full = next(r for r in rows if r.label == "full")
            row += [_cell(rows[i], full, "ade"), _cell(rows[i], full, "fde")]
        w.writerow(row)
    return buf.getvalue()


def pooling_table(rows_by_horizon):
    horizons = sorted(rows_by_horizon)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["pooling"]
    for h in horizons:
        header += [f"ade_{h}", f"fde_{h}"]
    w.writerow(header)
    first = rows_by_horizon[horizons[0]]
    for i, res in enumerate(first):
        row = [res.label]
        for h in horizons:
            rows = rows_by_horizon[h]
            full = next(r for r in rows if r.label == "vap")
            row += [_cell(rows[i], full, "ade"), _cell(rows[i], full, "fde")]
        w.writerow(row)
    return buf.getvalue()
