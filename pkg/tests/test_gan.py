from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_window, small_model
from kigan.batch import collate, displacements
from kigan.checks import END_TO_END_TOL, end_to_end_checks
from kigan.errors import DimensionError
from kigan.gan import (
    Discriminator,
    Generator,
    best_of_k,
    discriminate,
    gan_losses,
    generate,
    noise_stream,
    variety_loss,
)
from kigan.gradcheck import grad_check
from kigan.nn import zero_parameters
from kigan.tensor import GradTape, Tensor, tsum


def models(seed=0, **kw):
    cfg = small_model(**kw)
    rng = np.random.default_rng(seed)
    return Generator(cfg, rng), Discriminator(cfg, rng)


def test_generate_shape_and_determinism(scene):
    gen, _ = models()
    noise = np.random.default_rng(1).normal(size=(scene.n_agents, gen.cfg.d_z))
    out = generate(scene, gen, noise)
    assert out.shape == (scene.n_agents, scene.pred_len, 2)
    assert out.tobytes() == generate(scene, gen, noise).tobytes()


def test_distinct_noise_gives_distinct_futures(scene):
    gen, _ = models()
    rng = np.random.default_rng(2)
    a = generate(scene, gen, rng.normal(size=(2, gen.cfg.d_z)))
    b = generate(scene, gen, rng.normal(size=(2, gen.cfg.d_z)))
    assert not np.allclose(a, b)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4))
def test_generate_is_translation_equivariant(seed, n):
    rng = np.random.default_rng(seed)
    w = random_window(rng, n)
    gen, _ = models(seed % 5)
    noise = rng.normal(size=(n, gen.cfg.d_z))
    offset = rng.uniform(-300, 300, 2)
    base = generate(w, gen, noise)
    moved = generate(w.translated(offset), gen, noise)
    assert np.allclose(moved - offset, base, atol=1e-9)


def test_noise_stream_is_reproducible():
    a = noise_stream(5, 1, 2).standard_normal(4)
    assert np.array_equal(a, noise_stream(5, 1, 2).standard_normal(4))
    assert not np.array_equal(a, noise_stream(5, 1, 3).standard_normal(4))


def test_discriminate_examples(scene):
    gen, disc = models()
    seq = displacements(scene.positions)[0]
    logit = discriminate(seq, disc, scene.seq_len)
    assert logit.shape == ()
    with pytest.raises(DimensionError):
        discriminate(seq[:-1], disc, scene.seq_len)
    zero_parameters(disc)
    logit = discriminate(seq, disc)
    assert logit.item() == 0.0
    assert 1.0 / (1.0 + math.exp(-logit.item())) == 0.5


def test_discriminator_gradient(scene):
    _, disc = models(3)
    seq = displacements(scene.positions)
    err = grad_check(lambda *_: tsum(discriminate(seq, disc)), disc.parameters())
    assert err < 1e-5


def test_gan_losses_examples():
    d, g = gan_losses([0.0, 0.0], [0.0, 0.0])
    assert abs(d.item() - 2 * math.log(2)) < 1e-12
    assert abs(g.item() - math.log(2)) < 1e-12
    d, _ = gan_losses([40.0], [-40.0])
    assert d.item() < 1e-12


def test_gan_losses_clamp_saturated_logits():
    d, g = gan_losses([-800.0], [800.0])
    assert math.isfinite(d.item()) and math.isfinite(g.item())
    assert g.item() == pytest.approx(0.0, abs=1e-12)


def test_zero_discriminator_loss_is_two_ln_two(scene):
    gen, disc = models()
    zero_parameters(disc)
    batch = collate([scene])
    real = displacements(scene.positions)
    fake_future = gen(batch, np.zeros((2, gen.cfg.d_z))).data
    fake = displacements(np.concatenate([scene.obs_positions, fake_future], axis=1))
    d, _ = gan_losses(disc(real), disc(fake))
    assert abs(d.item() - 2 * math.log(2)) < 1e-12


def test_variety_loss_examples():
    truth = np.zeros((2, 2))
    assert variety_loss(truth, np.zeros((1, 2, 2))).item() == 0.0
    # distances 5, 2 and 7 from the truth
    samples = np.zeros((3, 2, 2))
    samples[0, 0] = [3, 4]
    samples[1, 1] = [2, 0]
    samples[2, 0] = [7, 0]
    assert variety_loss(truth, samples).item() == 2.0
    with pytest.raises(DimensionError):
        variety_loss(np.zeros((3, 2)), samples)


def test_variety_gradient_flows_through_argmin_only():
    truth = np.zeros((2, 2))
    samples = Tensor(np.array([[[3.0, 4.0], [0, 0]], [[0, 0], [2.0, 0]], [[7.0, 0], [0, 0]]]), requires_grad=True)
    with GradTape() as tape:
        loss = variety_loss(truth, samples)
    tape.backward(loss)
    assert not samples.grad[[0, 2]].any()
    assert np.array_equal(samples.grad[1], [[0, 0], [1, 0]])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 8))
def test_variety_bounds_and_monotone_in_k(seed, k):
    rng = np.random.default_rng(seed)
    truth = rng.normal(size=(5, 2))
    samples = rng.normal(size=(k + 3, 5, 2))
    dists = np.linalg.norm((samples - truth).reshape(k + 3, -1), axis=1)
    v = variety_loss(truth, samples[:k]).item()
    assert v == pytest.approx(dists[:k].min(), abs=1e-12)
    assert all(v <= d + 1e-12 for d in dists[:k])
    assert variety_loss(truth, samples).item() <= v


def test_best_of_k_batched_matches_per_agent():
    rng = np.random.default_rng(4)
    truth = rng.normal(size=(3, 4, 2))
    samples = rng.normal(size=(3 * 5, 4, 2))
    mins, best = best_of_k(truth, Tensor(samples), 5)
    for a in range(3):
        assert mins.data[a] == pytest.approx(variety_loss(truth[a], samples[a * 5 : a * 5 + 5]).item(), abs=1e-14)


@pytest.mark.parametrize("which", [0, 1])
def test_end_to_end_gradients(which):
    checks, names = end_to_end_checks(seed=0)
    name, f, params = checks[which]
    assert len(params) == len(names) > 20
    assert grad_check(f, params) < END_TO_END_TOL, name


def test_generator_parameter_count_is_fixed_per_config():
    a, _ = models(0)
    b, _ = models(1)
    assert a.num_parameters() == b.num_parameters()
    c, _ = models(0, mask_traffic=True, mask_motion=True)
    assert [n for n, _ in a.named_parameters()] == [n for n, _ in c.named_parameters()]
