"""Per-module step logic shared by the in-process and bus-driven loops.

Both drivers sequence the same objects identically (vehicle -> driver ->
sensors -> stress -> agent within a tick), so a run is reproducible across
transports. Sensor grids are defined on the integer tick counter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import agent as agent_mod
from .. import esn as esn_mod
from ..driver import DriverParams, DriverSim
from ..vehicle import PROFILE_NAMES, Route, VehicleSim, VehicleState

TICKS_PER_EDA = 5    # 20 Hz clock -> 4 Hz
TICKS_PER_HR = 20    # -> 1 Hz
TICKS_PER_AU = 4     # -> 5 Hz


def eda_due(tick: int) -> bool:
    return tick % TICKS_PER_EDA == 0


def hr_due(tick: int) -> bool:
    return tick % TICKS_PER_HR == 0


def au_due(tick: int) -> bool:
    return tick % TICKS_PER_AU == 0


def eda_index(tick: int) -> int:
    """1-based count of EDA samples emitted up to and including this tick."""
    return tick // TICKS_PER_EDA


def stress_due(tick: int, washout: int) -> bool:
    """Whether the stress module publishes on this tick's EDA sample: the
    first sample seeds differencing, then `washout` reservoir steps warm up."""
    return eda_due(tick) and eda_index(tick) >= washout + 1


def derive_seed(base: int, *key: int) -> int:
    """Stable child seed for a named role."""
    ss = np.random.SeedSequence(entropy=base, spawn_key=tuple(key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class SensorBatch:
    truth: float
    eda: float | None = None
    hr: float | None = None
    au: dict | None = None


class DriverTask:
    """Advances the latent driver each tick and emits on the sensor grids.

    A stress pin (override redirected into the plant) replaces the latent
    state after each step, so every emission reflects the pinned value."""

    def __init__(self, params: DriverParams, seed: int, dt: float):
        self.sim = DriverSim(params, seed=seed)
        self.dt = dt
        self.stress_pin: float | None = None

    def set_stress_pin(self, value: float | None):
        self.stress_pin = value

    def on_vehicle(self, tick: int, state: VehicleState) -> SensorBatch:
        self.sim.step(state, self.dt)
        if self.stress_pin is not None:
            self.sim.s = self.stress_pin
        batch = SensorBatch(truth=self.sim.s)
        t = state.t
        if eda_due(tick):
            batch.eda = self.sim.emit_eda(t).values["eda_uS"]
        if hr_due(tick):
            batch.hr = self.sim.emit_hr(t).values["bpm"]
        if au_due(tick):
            batch.au = self.sim.emit_au(t).values
        return batch


class StressTask:
    """Streaming ESN inference; returns the smoothed published estimate."""

    def __init__(self, model: esn_mod.EsnModel):
        self.model = model
        self.stream = esn_mod.EsnStream(model)

    @property
    def washout(self) -> int:
        return self.model.config.washout

    def on_eda(self, eda_value: float) -> float | None:
        return self.stream.consume(float(eda_value))


@dataclass
class AgentDecision:
    profile: str
    probs: list[float]


class AgentTask:
    """Epoch aggregation, action selection, and (optionally) TD learning."""

    def __init__(self, params: agent_mod.AgentParams, config: agent_mod.AgentConfig,
                 route: Route, action_seed: int, learn: bool = False,
                 sample_actions: bool | None = None):
        self.params = params
        self.config = config
        self.route = route
        self.learn = learn
        self.sample_actions = learn if sample_actions is None else sample_actions
        self.rng = np.random.default_rng(
            np.random.SeedSequence(entropy=action_seed, spawn_key=(31,)))
        self.stress_override: float | None = None
        self.features_log: list[np.ndarray] = []
        self.rewards: list[float] = []
        self.td_errors: list[float] = []
        self.reset_episode()

    def reset_episode(self):
        self.epoch_stress: list[tuple[float, float]] = []
        self.epoch_speeds: list[float] = []
        self.epoch_start_t = 0.0
        self.epoch_start_s = 0.0
        self.cur_s = 0.0
        self.prev_phi: np.ndarray | None = None
        self.pending: tuple[np.ndarray, int] | None = None

    def on_vehicle(self, ts: float, v: float, s_pos: float):
        self.epoch_speeds.append(float(v))
        self.cur_s = float(s_pos)

    def on_stress(self, ts: float, value: float):
        if self.stress_override is not None:
            value = self.stress_override
        self.epoch_stress.append((float(ts), float(value)))

    def set_stress_override(self, value: float | None):
        self.stress_override = value

    def on_epoch(self, t_end: float, terminal: bool = False) -> AgentDecision | None:
        epoch = agent_mod.EpochSummary(
            t_start=self.epoch_start_t, t_end=t_end,
            stress=self.epoch_stress, speeds=self.epoch_speeds,
            distance_m=self.cur_s - self.epoch_start_s)
        if not epoch.stress and self.prev_phi is None:
            # detector still warming up: hold the current profile
            self._roll_epoch(t_end)
            return None
        preview = self.route.mean_abs_kappa(self.cur_s, 100.0)
        phi, stale = agent_mod.build_features(epoch, preview, self.config.epoch_s,
                                              self.prev_phi)
        if self.learn and self.pending is not None and not stale:
            reward = agent_mod.compute_reward(epoch, self.config.beta)
            delta = agent_mod.td_update(
                self.params,
                agent_mod.Transition(phi=self.pending[0], action=self.pending[1],
                                     reward=reward, phi_next=phi, terminal=terminal),
                self.config)
            self.rewards.append(reward)
            self.td_errors.append(delta)
        if self.learn:
            self.features_log.append(phi.copy())
        self.prev_phi = phi
        self._roll_epoch(t_end)
        if terminal:
            self.pending = None
            return None
        probs = agent_mod.policy_forward(self.params, phi)
        if self.sample_actions:
            action = agent_mod.sample_action(probs, self.rng)
        else:
            action = agent_mod.greedy_action(probs)
        self.pending = (phi, action) if self.learn else None
        return AgentDecision(profile=PROFILE_NAMES[action], probs=[float(p) for p in probs])

    def _roll_epoch(self, t_end: float):
        self.epoch_stress = []
        self.epoch_speeds = []
        self.epoch_start_t = t_end
        self.epoch_start_s = self.cur_s


def build_vehicle(route: Route, profiles: dict, initial_profile: str, dt: float) -> VehicleSim:
    return VehicleSim(route, profiles=profiles, profile=initial_profile, dt=dt)
