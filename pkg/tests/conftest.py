"""Shared fixtures: a small trained stress model and agent for loop tests."""

import numpy as np
import pytest

from teach import esn as esn_mod
from teach.agent import AgentConfig, init_params
from teach.driver import DriverParams
from teach.orchestrator.config import RouteSpec, RunConfig
from teach.orchestrator.loop import run_direct_episode
from teach.orchestrator.tasks import derive_seed
from teach.vehicle import DEFAULT_PROFILES, make_route

TEST_ESN = esn_mod.EsnConfig(n_reservoir=30, washout=20, seed=3)
TEST_AGENT = AgentConfig(hidden=8, seed=2)


def gen_episode(seed: int, episode_s: float = 120.0):
    """One synthetic (eda, label) episode under a random profile schedule."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(41,)))
    profiles = ("conservative", "normal", "aggressive")
    choices = [profiles[int(rng.integers(0, 3))] for _ in range(40)]

    def schedule(tick):
        if (tick - 1) % 300 == 0:
            return choices[(tick - 1) // 300]
        return None

    eda, label = [], []

    def on_eda(tick, ts, value, oracle_s, est):
        eda.append(value)
        label.append(oracle_s)

    run_direct_episode(
        route=make_route(seed, n_segments=20), profiles=dict(DEFAULT_PROFILES),
        initial_profile="normal", driver_params=DriverParams(), seed=seed,
        episode_s=episode_s, profile_schedule=schedule, on_eda=on_eda)
    return np.array(eda), np.array(label)


@pytest.fixture(scope="session")
def small_esn_model():
    train = [gen_episode(derive_seed(7, 100, i)) for i in range(3)]
    model, _ = esn_mod.train_esn(train, [], TEST_ESN)
    return model


@pytest.fixture(scope="session")
def small_agent_params():
    return init_params(TEST_AGENT)


def make_test_config(**overrides) -> RunConfig:
    base = dict(
        mode="run",
        seed=5,
        route=RouteSpec(n_segments=12, kappa_range=(0.0, 0.02), obstacle_rate=0.1),
        episode_s=40.0,
        log_dir="runs",
    )
    base.update(overrides)
    return RunConfig(**base)
