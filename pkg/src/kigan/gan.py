"""Generator, discriminator and the adversarial and best-of-k losses."""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from .batch import SceneBatch, collate, displacements
from .config import ModelConfig
from .encoders import KnowledgeEncoders, RecurrentEncoder
from .errors import DimensionError
from .nn import MLP, Linear, LSTMCell, Module
from .pooling import make_pooler
from .tensor import (
    Tensor,
    clip,
    concat,
    mean,
    reshape,
    row_norm,
    stack,
    take_rows,
)

LOG_FLOOR = 1e-12


def noise_stream(seed, *key):
    """Generator for noise keyed by ``(seed, *key)``; same key, same draws."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, *[int(k) for k in key]])


def draw_noise(rng, rows, d_z):
    return rng.standard_normal((rows, d_z))


class Generator(Module):
    def __init__(self, cfg, rng):
        self._cfg = cfg
        self.encoders = KnowledgeEncoders(cfg, rng)
        self.pooling = make_pooler(cfg, cfg.combined_width, rng)
        self.init_state = Linear(cfg.recombined_width + cfg.d_z, cfg.d_dec, rng)
        self.dec_embed = Linear(2, cfg.d_embed, rng)
        self.decoder = LSTMCell(cfg.d_embed, cfg.d_dec, rng)
        self.output = Linear(cfg.d_dec, 2, rng)

    @property
    def cfg(self):
        return self._cfg

    def features(self, batch):
        """``F_recombined = [pooled ; combined ; traffic]`` per agent."""
        combined, traffic = self.encoders(batch)
        pooled = self.pooling(
            batch.anchor, batch.last_vel, combined, batch.pair_i, batch.pair_j
        )
        return concat([pooled, combined, traffic], axis=1)

    def decode(self, recombined, noise, last_disp, pred_len):
        """Roll the decoder; returns positions relative to the anchor, ``[rows, pred_len, 2]``."""
        cfg = self._cfg
        noise = noise if isinstance(noise, Tensor) else Tensor(noise)
        if noise.shape != (recombined.shape[0], cfg.d_z):
            raise DimensionError(f"noise shape {noise.shape} != {(recombined.shape[0], cfg.d_z)}")
        h = self.init_state(concat([recombined, noise], axis=1))
        c = Tensor(np.zeros(h.shape))
        step_in = Tensor(np.asarray(last_disp) / cfg.disp_scale)
        pos = Tensor(np.zeros((recombined.shape[0], 2)))
        out = []
        for _ in range(pred_len):
            h, c = self.decoder(self.dec_embed(step_in).relu(), h, c)
            step = self.output(h)
            pos = pos + step * cfg.disp_scale
            out.append(pos)
            step_in = step
        return stack(out, axis=1)

    def __call__(self, batch, noise, k=1):
        """Sample ``k`` futures per agent.

        ``noise`` is ``[n_agents * k, d_z]`` with rows ordered agent-major
        (row ``a * k + s`` is sample ``s`` of agent ``a``). Returns relative
        positions ``[n_agents * k, pred_len, 2]`` in the same order.
        """
        feats = self.features(batch)
        rows = np.repeat(np.arange(batch.n_agents), k)
        if k > 1:
            feats = take_rows(feats, rows)
        return self.decode(feats, noise, batch.last_disp[rows], batch.pred_len)


class Discriminator(Module):
    """LSTM over the displacement sequence of a full trajectory, then an MLP to one logit."""

    def __init__(self, cfg, rng):
        self._cfg = cfg
        self.encoder = RecurrentEncoder(2, cfg.d_embed, cfg.d_disc, rng)
        self.classifier = MLP([cfg.d_disc, cfg.disc_hidden, 1], rng, final_activation=False)

    def __call__(self, disp_seq):
        """``disp_seq``: ``[rows, obs_len + pred_len, 2]`` metres (numpy or tensor)."""
        if isinstance(disp_seq, Tensor):
            seq = disp_seq * (1.0 / self._cfg.disp_scale)
        else:
            seq = Tensor(np.asarray(disp_seq) / self._cfg.disp_scale)
        return reshape(self.classifier(self.encoder(seq)), (seq.shape[0],))


def trajectory_displacements(obs_pos, future):
    """Full displacement sequence from observed positions (numpy) and a future (numpy or tensor)."""
    obs_disp = displacements(np.asarray(obs_pos))
    if not isinstance(future, Tensor):
        full = np.concatenate([np.asarray(obs_pos), np.asarray(future)], axis=1)
        return displacements(full)
    last = Tensor(np.asarray(obs_pos)[:, -1:, :])
    prev = concat([last, future[:, :-1]], axis=1)
    return concat([Tensor(obs_disp), future - prev], axis=1)


# ---------------------------------------------------------------- single-window API


def generate(window, gen, noise):
    """Predicted absolute futures ``[n_agents, pred_len, 2]`` for one window.

    ``noise`` holds one ``d_z`` row per agent.
    """
    batch = collate([window])
    rel = gen(batch, np.asarray(noise, dtype=np.float64).reshape(batch.n_agents, -1))
    return rel.data + batch.anchor[:, None, :]


def discriminate(disp_seq, disc, seq_len=None):
    seq = np.asarray(disp_seq, dtype=np.float64) if not isinstance(disp_seq, Tensor) else disp_seq
    single = seq.ndim == 2
    if single:
        seq = seq[None] if not isinstance(seq, Tensor) else reshape(seq, (1,) + seq.shape)
    if seq_len is not None and seq.shape[1] != seq_len:
        raise DimensionError(f"discriminate: sequence length {seq.shape[1]} != {seq_len}")
    logits = disc(seq)
    return reshape(logits, ()) if single else logits


# ---------------------------------------------------------------- losses


def _log_clamped(p):
    return clip(p, LOG_FLOOR, None).log()


def gan_losses(real_logits, fake_logits):
    """Discriminator loss and the non-saturating generator loss."""
    real = real_logits if isinstance(real_logits, Tensor) else Tensor(real_logits)
    fake = fake_logits if isinstance(fake_logits, Tensor) else Tensor(fake_logits)
    if real.size == 0 or fake.size == 0:
        raise DimensionError("gan_losses needs non-empty logits")
    p_real = real.sigmoid()
    p_fake = fake.sigmoid()
    d_loss = -mean(_log_clamped(p_real)) - mean(_log_clamped(1.0 - p_fake))
    g_loss = -mean(_log_clamped(p_fake))
    return d_loss, g_loss


def generator_adversarial_loss(fake_logits):
    fake = fake_logits if isinstance(fake_logits, Tensor) else Tensor(fake_logits)
    return -mean(_log_clamped(fake.sigmoid()))


def sample_distances(truth, samples):
    """L2 norm of the flattened difference between each sample and the truth.

    ``samples`` is ``[rows, T, 2]`` (tensor); ``truth`` is ``[rows, T, 2]``.
    """
    rows = samples.shape[0]
    diff = samples - Tensor(np.asarray(truth, dtype=np.float64))
    return row_norm(reshape(diff, (rows, -1)))


def best_of_k(truth, samples, k):
    """Per-agent minimum L2 over ``k`` agent-major samples.

    Returns ``(min distances tensor [n], best index array [n])``; gradient
    flows only through the selected sample.
    """
    n = samples.shape[0] // k
    truth = np.repeat(np.asarray(truth, dtype=np.float64), k, axis=0)
    dist = sample_distances(truth, samples)
    best = dist.data.reshape(n, k).argmin(axis=1)
    picked = take_rows(reshape(dist, (n * k, 1)), np.arange(n) * k + best)
    return reshape(picked, (n,)), best


def variety_loss(truth, samples):
    """min over k of ``||truth - sample_k||`` for one agent; ``samples`` is ``[k, T, 2]``."""
    if not isinstance(samples, Tensor):
        samples = Tensor(samples)
    truth = np.asarray(truth, dtype=np.float64)
    if samples.ndim != 3 or samples.shape[1:] != truth.shape:
        raise DimensionError(f"variety_loss: samples {samples.shape} vs truth {truth.shape}")
    picked, _ = best_of_k(truth[None], samples, samples.shape[0])
    return reshape(picked, ())


# ---------------------------------------------------------------- models


def build_models(cfg: ModelConfig, seed=0):
    rng = np.random.default_rng(seed)
    return Generator(cfg, rng), Discriminator(cfg, rng)


@contextmanager
def frozen(module):
    """Temporarily stop ``module``'s parameters from receiving gradients."""
    params = module.parameters()
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p in params:
            p.requires_grad = True


def zero_logit_loss():
    """d_loss when both logits are zero: 2 ln 2."""
    return 2.0 * math.log(2.0)
