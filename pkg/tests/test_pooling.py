from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kigan.config import ModelConfig
from kigan.pooling import (
    HiddenStatePool,
    PoolingInput,
    SocialGridPool,
    VehicularAttentionPool,
    all_pairs,
    make_pooler,
    pool,
    relative_positions,
)
from kigan.tensor import GradTape, Tensor, tsum

CFG = ModelConfig()
D_H = 12
METHODS = ("vap", "social", "hidden")


def pooler(method, seed=0, **kw):
    return make_pooler(ModelConfig(pooling=method, **kw), D_H, np.random.default_rng(seed))


def scene(rng, n, spread=15.0):
    return PoolingInput(rng.uniform(-spread, spread, (n, 2)), rng.uniform(-10, 10, (n, 2)),
                        Tensor(rng.normal(size=(n, D_H))))


def test_relative_positions_examples():
    p = np.array([[0.0, 0.0], [3.0, 4.0]])
    i, j = all_pairs(2)
    rp = {(a, b): r for a, b, r in zip(i, j, relative_positions(p))}
    assert np.array_equal(rp[(0, 1)], [-3, -4]) and np.array_equal(rp[(1, 0)], [3, 4])
    assert len(all_pairs(1)[0]) == 0


def test_relative_positions_antisymmetric():
    p = np.random.default_rng(0).normal(size=(5, 2))
    i, j = all_pairs(5)
    rp = {(a, b): r for a, b, r in zip(i, j, relative_positions(p))}
    assert all(np.array_equal(rp[(a, b)], -rp[(b, a)]) for a, b in rp)


def test_pair_and_velocity_embeddings():
    vap = pooler("vap")
    for lin in (vap.spatial, vap.velocity):
        lin.bias.data[...] = 0.0
    assert not vap.embed_pair(np.zeros((1, 2))).data.any()
    assert not vap.embed_velocity(np.zeros((1, 2))).data.any()
    assert vap.embed_pair(np.ones((3, 2))).shape == (3, CFG.d_rel)


def test_embedding_gradients():
    from kigan.gradcheck import grad_check

    vap = pooler("vap")
    rel = np.random.default_rng(1).normal(size=(4, 2)) * 10
    err = grad_check(lambda w, b: tsum(vap.embed_pair(rel)), [vap.spatial.weight, vap.spatial.bias])
    assert err < 1e-6


def _vap_weights(vap, sc):
    i, j = all_pairs(sc.n_agents)
    e = vap.embed_pair(relative_positions(sc.positions, i, j))
    v = vap.embed_velocity(sc.velocities).data[i]
    return vap.attention_weights(e, Tensor(v), i, sc.n_agents).data, i


def test_attention_singleton_and_symmetric_cases():
    vap = pooler("vap")
    rng = np.random.default_rng(2)
    w, _ = _vap_weights(vap, scene(rng, 2))
    assert np.array_equal(w, np.ones_like(w))
    # agent 0 sees two neighbours at the same relative position
    sc = PoolingInput(np.array([[0.0, 0.0], [5.0, 1.0], [5.0, 1.0]]), rng.normal(size=(3, 2)),
                      Tensor(rng.normal(size=(3, D_H))))
    w, i = _vap_weights(vap, sc)
    assert np.allclose(w[i == 0], 0.5, atol=1e-15)


def _relu(x):
    return np.maximum(x, 0.0)


def _mlp(m, x, final=True):
    layers = [getattr(m, f"layer{k}") for k in range(m._n)]
    for k, layer in enumerate(layers):
        x = x @ layer.weight.data + layer.bias.data
        if k < len(layers) - 1 or final:
            x = _relu(x)
    return x


def vap_oracle(vap, positions, velocities, hidden):
    """Straight-line evaluation, one agent and one neighbour at a time."""
    cfg = vap._cfg
    n = len(positions)
    out = np.zeros((n, cfg.d_pool))
    for i in range(n):
        nbrs = [j for j in range(n) if j != i]
        if not nbrs:
            continue
        v_i = _relu(velocities[i] / cfg.vel_scale @ vap.velocity.weight.data + vap.velocity.bias.data)
        e = {j: _relu((positions[i] - positions[j]) / cfg.rel_scale @ vap.spatial.weight.data
                      + vap.spatial.bias.data) for j in nbrs}
        score = {j: _mlp(vap.attention, np.concatenate([e[j], v_i]), final=False) for j in nbrs}
        z = np.array([score[j] for j in nbrs])
        z = np.exp(z - z.max(axis=0))
        w = z / z.sum(axis=0)
        feats = [_mlp(vap.mlp, np.concatenate([e[j], hidden[j] * w[k]])) for k, j in enumerate(nbrs)]
        out[i] = np.max(feats, axis=0)
    return out


def test_vap_matches_step_by_step_oracle():
    rng = np.random.default_rng(3)
    vap = pooler("vap")
    sc = scene(rng, 3)
    got = pool(vap, sc).data
    want = vap_oracle(vap, sc.positions, sc.velocities, sc.hidden.data)
    assert np.abs(got - want).max() < 1e-9


def test_vap_two_agents_is_single_neighbour_mlp():
    rng = np.random.default_rng(4)
    vap = pooler("vap")
    sc = scene(rng, 2)
    out = pool(vap, sc).data
    e = _relu((sc.positions[0] - sc.positions[1]) / CFG.rel_scale @ vap.spatial.weight.data + vap.spatial.bias.data)
    assert np.allclose(out[0], _mlp(vap.mlp, np.concatenate([e, sc.hidden.data[1]])), atol=1e-12)


@pytest.mark.parametrize("method", METHODS)
def test_single_agent_pools_to_zero(method):
    p = pooler(method)
    out = pool(p, scene(np.random.default_rng(5), 1)).data
    assert out.shape == (1, CFG.d_pool) and not out.any()


def test_hidden_pool_equals_vap_with_unit_attention(monkeypatch):
    vap = pooler("vap", seed=6)
    hid = HiddenStatePool(CFG, D_H, np.random.default_rng(7))
    hid.spatial, hid.mlp = vap.spatial, vap.mlp
    monkeypatch.setattr(vap, "attention_weights", lambda e, v, i, n: Tensor(np.ones((len(i), D_H))))
    sc = scene(np.random.default_rng(8), 4)
    assert np.allclose(pool(vap, sc).data, pool(hid, sc).data, atol=1e-14)


def test_social_grid_ignores_far_neighbours():
    soc = pooler("social", seed=9)
    assert isinstance(soc, SocialGridPool)
    rng = np.random.default_rng(10)
    hidden = rng.normal(size=(3, D_H))
    vel = rng.normal(size=(3, 2))
    pos = np.array([[0.0, 0.0], [3.0, -2.0], [40.0, 0.0]])
    near = pool(soc, PoolingInput(pos[:2], vel[:2], Tensor(hidden[:2]))).data
    both = pool(soc, PoolingInput(pos, vel, Tensor(hidden))).data
    assert np.array_equal(both[0], near[0])
    assert not both[2].any()


def _permute(sc, perm):
    return PoolingInput(sc.positions[perm], sc.velocities[perm], Tensor(sc.hidden.data[perm]))


@settings(max_examples=120, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_pooling_invariants_over_random_scenes(seed, n):
    rng = np.random.default_rng(seed)
    sc = scene(rng, n)
    perm = rng.permutation(n)
    offset = rng.uniform(-500, 500, 2)
    shifted = PoolingInput(sc.positions + offset, sc.velocities, sc.hidden)
    for method in METHODS:
        p = pooler(method, seed=seed % 7)
        base = pool(p, sc).data
        assert np.allclose(pool(p, _permute(sc, perm)).data, base[perm], atol=1e-12, rtol=0)
        assert np.allclose(pool(p, shifted).data, base, atol=1e-9)
    vap = pooler("vap", seed=seed % 7)
    if n > 1:
        w, i = _vap_weights(vap, sc)
        sums = np.zeros((n, D_H))
        np.add.at(sums, i, w)
        assert np.abs(sums - 1.0).max() < 1e-9
        assert (w >= 0).all()
    else:
        assert not pool(vap, sc).data.any()


def test_vap_gradient_reaches_all_parameters():
    vap = pooler("vap", seed=11)
    sc = scene(np.random.default_rng(12), 4)
    with GradTape() as tape:
        out = pool(vap, sc)
        loss = tsum(out * Tensor(np.random.default_rng(13).normal(size=out.shape)))
    tape.backward(loss)
    for name, p in vap.named_parameters():
        assert p.grad is not None and np.abs(p.grad).max() > 0, name


def test_scalar_attention_variant_normalizes_over_neighbours():
    vap = pooler("vap", attention="scalar")
    assert isinstance(vap, VehicularAttentionPool)
    w, i = _vap_weights(vap, scene(np.random.default_rng(14), 4))
    assert np.allclose(w, w[:, :1])
    sums = np.zeros(4)
    np.add.at(sums, i, w[:, 0])
    assert np.allclose(sums, 1.0, atol=1e-12)
