"""Adversarial training loop, training log and binary checkpoints."""

from __future__ import annotations

import csv
import io
import json
import math
import struct
import time
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .batch import collate
from .config import TrainConfig
from .errors import (
    CheckpointFormatError,
    CheckpointVersionError,
    ConfigError,
    DataError,
    NonFiniteError,
    NumericError,
)
from .evaluation import evaluate
from .gan import (
    Discriminator,
    Generator,
    best_of_k,
    frozen,
    gan_losses,
    generator_adversarial_loss,
    noise_stream,
    trajectory_displacements,
)
from .optim import AdamState, adam_step
from .tensor import GradTape, Tensor, mean, no_grad, take_rows

NOISE_D, NOISE_G = 0, 1


@dataclass
class EpochRecord:
    epoch: int
    d_loss: float
    g_loss: float
    variety: float
    ade: float
    fde: float
    seconds: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    d_steps: int = 0
    g_steps: int = 0

    COLUMNS = ("epoch", "d_loss", "g_loss", "variety", "ade", "fde", "seconds")

    def __len__(self):
        return len(self.records)

    def append(self, rec):
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise DataError(f"epoch {rec.epoch} does not follow {self.records[-1].epoch}")
        self.records.append(rec)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    def to_csv(self, include_seconds=True):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = self.COLUMNS if include_seconds else self.COLUMNS[:-1]
        w.writerow(cols)
        for r in self.records:
            w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in cols[1:]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.DictReader(io.StringIO(text)))
        log = cls()
        for row in rows:
            log.append(
                EpochRecord(
                    epoch=int(row["epoch"]),
                    **{c: float(row.get(c, "nan")) for c in cls.COLUMNS[1:]},
                )
            )
        return log

    def comparable(self):
        """Everything except wall-clock time, as exact reprs (so NaN equals NaN)."""
        return [tuple(repr(getattr(r, f.name)) for f in fields(r) if f.name != "seconds") for r in self.records]

    def to_dict(self):
        """Checkpoint form; wall-clock time is left out so identical runs give identical files."""
        return dict(
            records=[[getattr(r, c) for c in self.COLUMNS[:-1]] for r in self.records],
            d_steps=self.d_steps,
            g_steps=self.g_steps,
        )

    @classmethod
    def from_dict(cls, d):
        log = cls(d_steps=int(d.get("d_steps", 0)), g_steps=int(d.get("g_steps", 0)))
        for row in d.get("records", []):
            vals = [float(x) for x in row[1:]] + [float("nan")] * (len(cls.COLUMNS) - len(row))
            log.records.append(EpochRecord(int(row[0]), *vals))
        return log


class Trainer:
    """Owns the two models, their optimizer states and the log; can resume."""

    def __init__(self, config: TrainConfig, generator=None, discriminator=None):
        config.validate()
        self.config = config
        rng = np.random.default_rng([config.seed & 0xFFFFFFFF, 7])
        self.generator = generator or Generator(config.model, rng)
        self.discriminator = discriminator or Discriminator(config.model, rng)
        self.opt_g = AdamState.for_params(self.generator.parameters(), lr=config.lr_g)
        self.opt_d = AdamState.for_params(self.discriminator.parameters(), lr=config.lr_d)
        self.log = TrainLog()
        self.epoch = 0

    # -------------------------------------------------------------- steps

    def _noise(self, epoch, batch_idx, purpose, rows):
        rng = noise_stream(self.config.seed, epoch, batch_idx, purpose)
        return rng.standard_normal((rows, self.config.model.d_z))

    def discriminator_step(self, batch, epoch, batch_idx):
        gen, disc = self.generator, self.discriminator
        tgt = np.nonzero(batch.is_target)[0]
        with no_grad():
            fake = gen(batch, self._noise(epoch, batch_idx, NOISE_D, batch.n_agents)).data
        real_seq = trajectory_displacements(batch.obs_pos[tgt], batch.future[tgt])
        fake_seq = trajectory_displacements(batch.obs_pos[tgt], fake[tgt])
        disc.zero_grad()
        with GradTape() as tape:
            d_loss, _ = gan_losses(disc(real_seq), disc(fake_seq))
        tape.backward(d_loss)
        params = disc.parameters()
        adam_step(params, [p.grad for p in params], self.opt_d)
        self.log.d_steps += 1
        return d_loss.item()

    def generator_step(self, batch, epoch, batch_idx):
        cfg = self.config
        gen, disc = self.generator, self.discriminator
        k = cfg.k
        tgt = np.nonzero(batch.is_target)[0]
        gen.zero_grad()
        disc.zero_grad()
        with frozen(disc):
            with GradTape() as tape:
                rel = gen(batch, self._noise(epoch, batch_idx, NOISE_G, batch.n_agents * k), k=k)
                rows = (tgt[:, None] * k + np.arange(k)[None, :]).reshape(-1)
                variety, _ = best_of_k(batch.future[tgt], take_rows(rel, rows), k)
                variety = mean(variety)
                total = variety * cfg.variety_weight
                g_loss = Tensor(np.zeros(()))
                if cfg.adversarial_weight > 0:
                    first = take_rows(rel, tgt * k)
                    g_loss = generator_adversarial_loss(disc(trajectory_displacements(batch.obs_pos[tgt], first)))
                    total = total + g_loss * cfg.adversarial_weight
            tape.backward(total)
        params = gen.parameters()
        adam_step(params, [p.grad for p in params], self.opt_g)
        self.log.g_steps += 1
        return g_loss.item(), variety.item()

    # -------------------------------------------------------------- epochs

    def batches(self, windows, epoch):
        order = np.random.default_rng([self.config.seed & 0xFFFFFFFF, epoch]).permutation(len(windows))
        bs = self.config.batch_size
        return [[windows[i] for i in order[s : s + bs]] for s in range(0, len(order), bs)]

    def run_epoch(self, windows, val_windows=None):
        cfg = self.config
        epoch = self.epoch + 1
        t0 = time.perf_counter()
        d_losses, g_losses, varieties = [], [], []
        for b, chunk in enumerate(self.batches(windows, epoch)):
            batch = collate(chunk)
            try:
                d_losses.append(self.discriminator_step(batch, epoch, b))
                g, v = self.generator_step(batch, epoch, b)
            except NonFiniteError as exc:
                raise NumericError(f"non-finite value at epoch {epoch}, batch {b}: {exc}") from exc
            g_losses.append(g)
            varieties.append(v)
            for name, val in (("d_loss", d_losses[-1]), ("g_loss", g), ("variety", v)):
                if not math.isfinite(val):
                    raise NumericError(f"{name} is not finite at epoch {epoch}, batch {b}")
        ade = fde = float("nan")
        if epoch % cfg.eval_every == 0:
            report = evaluate(self.generator, val_windows or windows, cfg.eval_k, cfg.eval_seed)
            ade, fde = report.ade, report.fde
        self.epoch = epoch
        rec = EpochRecord(
            epoch=epoch,
            d_loss=float(np.mean(d_losses)),
            g_loss=float(np.mean(g_losses)),
            variety=float(np.mean(varieties)),
            ade=ade,
            fde=fde,
            seconds=time.perf_counter() - t0,
        )
        self.log.append(rec)
        return rec

    def fit(self, windows, val_windows=None, until=None, on_epoch=None):
        if not windows:
            raise DataError("training needs at least one window")
        until = self.config.epochs if until is None else until
        while self.epoch < until:
            rec = self.run_epoch(windows, val_windows)
            if on_epoch is not None:
                on_epoch(self, rec)
        return self.generator, self.discriminator, self.log

    # -------------------------------------------------------------- checkpoints

    def save(self, path):
        checkpoint_save(self, path)

    @classmethod
    def load(cls, path, config=None):
        return checkpoint_load(path, config)


def train(windows, config: TrainConfig, val_windows=None):
    """Train from scratch; returns ``(generator, discriminator, log)``."""
    return Trainer(config).fit(windows, val_windows)


# ------------------------------------------------------------------ checkpoint file

MAGIC = b"KIGANCKP"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def _optimizer_arrays(prefix, state):
    out = {}
    for i, (m, v) in enumerate(zip(state.m, state.v)):
        out[f"{prefix}.m.{i}"] = m
        out[f"{prefix}.v.{i}"] = v
    return out


def checkpoint_save(trainer, path):
    """Write models, optimizer moments, config and log to one file.

    Layout: magic, uint32 version, uint64 header length, JSON header,
    little-endian float64 tensor data in header order, CRC32 of all
    preceding bytes.
    """
    tensors = {}
    for name, p in trainer.generator.named_parameters("generator."):
        tensors[name] = p.data
    for name, p in trainer.discriminator.named_parameters("discriminator."):
        tensors[name] = p.data
    tensors.update(_optimizer_arrays("opt_g", trainer.opt_g))
    tensors.update(_optimizer_arrays("opt_d", trainer.opt_d))
    header = dict(
        config=trainer.config.to_dict(),
        tensors=[[name, list(arr.shape)] for name, arr in tensors.items()],
        epoch=trainer.epoch,
        opt_g_step=trainer.opt_g.step,
        opt_d_step=trainer.opt_d.step,
        log=trainer.log.to_dict(),
    )
    head = json.dumps(header, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in tensors.values())
    blob = _PREFIX.pack(MAGIC, VERSION, len(head)) + head + body
    blob += struct.pack("<I", zlib.crc32(blob))
    Path(path).write_bytes(blob)


def _read_checkpoint(path):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointFormatError(f"cannot read checkpoint {path}: {exc}") from None
    if len(blob) < _PREFIX.size + 4:
        raise CheckpointFormatError("checkpoint is truncated")
    magic, version, head_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) != crc:
        raise CheckpointFormatError("checkpoint checksum mismatch (corrupt or truncated)")
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, expected {VERSION}")
    end = _PREFIX.size + head_len
    if end > len(blob) - 4:
        raise CheckpointFormatError("checkpoint header overruns file")
    try:
        header = json.loads(blob[_PREFIX.size : end])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"bad checkpoint header: {exc}") from None
    arrays = {}
    pos = end
    for name, shape in header["tensors"]:
        n = int(np.prod(shape)) if shape else 1
        nbytes = 8 * n
        if pos + nbytes > len(blob) - 4:
            raise CheckpointFormatError("checkpoint data is truncated")
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).astype(np.float64).reshape(shape)
        pos += nbytes
    if pos != len(blob) - 4:
        raise CheckpointFormatError("checkpoint has trailing bytes")
    return header, arrays


def checkpoint_load(path, config=None):
    """Rebuild a :class:`Trainer` from ``path``.

    If ``config`` is given, its model architecture must match the stored one.
    """
    header, arrays = _read_checkpoint(path)
    try:
        stored = TrainConfig.from_dict(header["config"])
    except ConfigError as exc:
        raise CheckpointFormatError(f"checkpoint config unreadable: {exc}") from None
    if config is not None:
        if config.model.architecture() != stored.model.architecture():
            diff = sorted(
                k for k, v in config.model.architecture().items() if stored.model.architecture().get(k) != v
            )
            raise ConfigError(f"checkpoint model config differs in {diff}")
        stored = config
    trainer = Trainer(stored)
    for prefix, module in (("generator.", trainer.generator), ("discriminator.", trainer.discriminator)):
        for name, p in module.named_parameters(prefix):
            if name not in arrays or arrays[name].shape != p.shape:
                raise CheckpointFormatError(f"checkpoint lacks tensor {name} with shape {p.shape}")
            p.data = arrays[name].copy()
    for prefix, state, step in (
        ("opt_g", trainer.opt_g, header["opt_g_step"]),
        ("opt_d", trainer.opt_d, header["opt_d_step"]),
    ):
        for i in range(len(state.m)):
            state.m[i] = arrays[f"{prefix}.m.{i}"].copy()
            state.v[i] = arrays[f"{prefix}.v.{i}"].copy()
        state.step = int(step)
    trainer.epoch = int(header["epoch"])
    trainer.log = TrainLog.from_dict(header["log"])
    return trainer
