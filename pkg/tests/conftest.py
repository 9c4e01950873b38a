from __future__ import annotations

import sys

import numpy as np
import pytest

from kigan.checks import TOY_MODEL, toy_scene
from kigan.config import ModelConfig, TrainConfig
from kigan.data import SceneWindow, make_windows, normalize, resample
from kigan.synth import ScenarioConfig, simulate_tracks


def small_model(**overrides):
    return ModelConfig(**{**TOY_MODEL, **overrides})


def random_window(rng, n_agents, obs_len=4, pred_len=3, spread=20.0):
    """Normalized window with random kinematics, classes and signals."""
    L = obs_len + pred_len
    start = rng.uniform(-spread, spread, size=(n_agents, 2))
    vel = rng.uniform(-8, 8, size=(n_agents, 2))
    t = np.arange(L) * 0.5
    pos = start[:, None] + vel[:, None] * t[None, :, None] + rng.normal(0, 0.3, (n_agents, L, 2))
    window = SceneWindow(
        obs_len=obs_len,
        pred_len=pred_len,
        agent_ids=[f"a{k}" for k in range(n_agents)],
        classes=rng.integers(0, 6, n_agents),
        dims=rng.uniform(1.5, 10.0, (n_agents, 2)),
        positions=pos,
        velocities=np.repeat(vel[:, None], L, axis=1) + rng.normal(0, 0.2, (n_agents, L, 2)),
        accelerations=rng.normal(0, 0.5, (n_agents, L, 2)),
        signals=rng.integers(1, 6, L),
        is_target=np.ones(n_agents, dtype=bool),
        anchor=pos[:, obs_len - 1].copy(),
    )
    return normalize(window)[0]


@pytest.fixture
def toy_cfg():
    return small_model()


@pytest.fixture
def scene():
    return toy_scene(0)


@pytest.fixture(scope="session")
def sim_windows():
    """Windows from the default synthetic intersection, 2 fps, obs/pred 12."""
    tracks, signals = simulate_tracks(ScenarioConfig(seed=0))
    tracks = [resample(t, 15) for t in tracks]
    return [normalize(w)[0] for w in make_windows(tracks, signals, 12, 12, 12)]


@pytest.fixture
def tiny_train_config():
    return TrainConfig(batch_size=4, epochs=2, k=2, eval_k=2, obs_len=4, pred_len=3, model=small_model())


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
