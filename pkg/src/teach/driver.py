"""Synthetic driver: latent stress oracle and sensor emission.

Stress integrates a driving-load signal (accelerations, jerk, excess speed)
with fast rise and slow relaxation. The EDA channel is a tonic level affine
in stress plus Poisson-spawned bi-exponential skin-conductance responses and
measurement noise; HR and facial action-unit channels are monitoring-only.
A CSV replay path stands in for recorded datasets.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .vehicle import VehicleState

EDA_RATE_HZ = 4.0
HR_RATE_HZ = 1.0
AU_RATE_HZ = 5.0

AU_NAMES = ("AU01", "AU04", "AU07", "AU15", "AU23")
STRESS_LINKED_AUS = ("AU04", "AU07", "AU23")

SCR_PRUNE_EPS = 1e-4


class ReplayError(ValueError):
    pass


@dataclass(frozen=True)
class DriverParams:
    # load weights and normalizers
    w_a: float = 0.3
    w_l: float = 0.3
    w_j: float = 0.2
    w_v: float = 0.2
    a_ref: float = 2.0
    l_ref: float = 2.0
    j_ref: float = 4.0
    v_comf: float = 15.0
    v_ref: float = 10.0
    # stress dynamics
    tau_up: float = 10.0
    tau_down: float = 40.0
    # EDA synthesis
    eda_base: float = 2.0
    k_tonic: float = 4.0
    lambda0: float = 0.05
    lambda1: float = 0.4
    scr_amp: float = 0.3
    tau_r: float = 0.75
    tau_d: float = 4.0
    sigma_eda: float = 0.02
    # monitoring channels
    sigma_hr: float = 1.5
    k_au: float = 0.8
    sigma_au: float = 0.1


@dataclass(frozen=True)
class SensorSample:
    ts: float
    kind: str                      # eda | hr | au
    values: dict[str, float]


def driving_load(params: DriverParams, vehicle: VehicleState) -> float:
    """Dimensionless load in [0,1] from the current vehicle state."""
    load = (params.w_a * abs(vehicle.a_long) / params.a_ref
            + params.w_l * vehicle.a_lat / params.l_ref
            + params.w_j * abs(vehicle.jerk) / params.j_ref
            + params.w_v * max(0.0, vehicle.v - params.v_comf) / params.v_ref)
    return min(1.0, max(0.0, load))


def stress_update(params: DriverParams, s: float, load: float, dt: float) -> float:
    """s' = clip(s + dt*(load*(1-s)/tau_up - s/tau_down), 0, 1)."""
    s_next = s + dt * (load * (1.0 - s) / params.tau_up - s / params.tau_down)
    return min(1.0, max(0.0, s_next))


class DriverSim:
    """Latent-stress state plus seeded emitters for the three sensor streams."""

    def __init__(self, params: DriverParams | None = None, seed: int = 0, s0: float = 0.0):
        self.params = params or DriverParams()
        self.s = float(s0)
        self.active_scrs: list[tuple[float, float]] = []  # (onset, amplitude)
        self.rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(11,)))
        p = self.params
        # bi-exponential kernel peak offset, used when pruning decayed SCRs
        self._t_peak = (p.tau_r * p.tau_d / (p.tau_d - p.tau_r)) * math.log(p.tau_d / p.tau_r)

    @property
    def tonic(self) -> float:
        return self.params.eda_base + self.params.k_tonic * self.s

    def step(self, vehicle: VehicleState, dt: float) -> float:
        """Advance latent stress by dt against the vehicle state; returns the load."""
        load = driving_load(self.params, vehicle)
        self.s = stress_update(self.params, self.s, load, dt)
        return load

    def _scr_kernel(self, amp: float, dt_since_onset: float) -> float:
        if dt_since_onset < 0.0:
            return 0.0
        p = self.params
        return amp * (math.exp(-dt_since_onset / p.tau_d)
                      - math.exp(-dt_since_onset / p.tau_r))

    def emit_eda(self, t: float) -> SensorSample:
        """EDA sample on the 4 Hz grid; spawns SCR events for the past interval."""
        p = self.params
        interval = 1.0 / EDA_RATE_HZ
        rate = p.lambda0 + p.lambda1 * self.s
        n_new = int(self.rng.poisson(rate * interval)) if rate > 0.0 else 0
        for _ in range(n_new):
            onset = t - interval * float(self.rng.random())
            self.active_scrs.append((onset, p.scr_amp * (1.0 + self.s)))
        self.active_scrs = [
            (t0, amp) for (t0, amp) in self.active_scrs
            if not (t - t0 > self._t_peak and self._scr_kernel(amp, t - t0) < SCR_PRUNE_EPS)
        ]
        phasic = sum(self._scr_kernel(amp, t - t0) for (t0, amp) in self.active_scrs)
        noise = float(self.rng.normal()) * p.sigma_eda
        eda = max(self.tonic + phasic + noise, 1e-6)
        return SensorSample(ts=t, kind="eda", values={"eda_uS": eda})

    def emit_hr(self, t: float) -> SensorSample:
        p = self.params
        bpm = 60.0 + 40.0 * self.s + float(self.rng.normal()) * p.sigma_hr
        return SensorSample(ts=t, kind="hr", values={"bpm": min(220.0, max(30.0, bpm))})

    def emit_au(self, t: float) -> SensorSample:
        p = self.params
        values = {}
        for name in AU_NAMES:
            noise = float(self.rng.normal()) * p.sigma_au
            level = p.k_au * self.s * 5.0 + noise if name in STRESS_LINKED_AUS else noise
            values[name] = min(5.0, max(0.0, level))
        return SensorSample(ts=t, kind="au", values=values)


# -- recorded-data replay ----------------------------------------------------

@dataclass
class ReplaySource:
    path: str
    rate_hz: float = EDA_RATE_HZ
    columns: dict[str, str] = field(default_factory=dict)  # logical -> csv header
    label_positive: int | None = None

    def column(self, logical: str) -> str:
        return self.columns.get(logical, logical)


@dataclass
class ReplayStream:
    samples: list[SensorSample]
    hr: list[SensorSample]
    labels: list[float] | None
    rate_hz: float


def _map_label(raw: str, row_no: int, label_positive: int | None) -> float:
    try:
        value = float(raw)
    except ValueError as exc:
        raise ReplayError(f"row {row_no}: unparseable label {raw!r}") from exc
    if label_positive is not None:
        return 1.0 if int(value) == label_positive else 0.0
    if value in (0.0, 1.0):
        return value
    if 0.0 <= value <= 1.0:
        return value
    raise ReplayError(
        f"row {row_no}: label {value} outside [0,1]; pass label_positive "
        f"to map integer classes")


def load_replay(source: ReplaySource) -> ReplayStream:
    """Parse a recorded CSV into sensor samples (batch; pacing is the caller's).

    Required column: eda. Optional: t (else synthesized from rate), hr,
    label. Errors carry the offending row number.
    """
    if source.rate_hz <= 0:
        raise ReplayError(f"declared rate must be > 0, got {source.rate_hz}")
    path = Path(source.path)
    if not path.exists():
        raise ReplayError(f"replay file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        eda_col = source.column("eda")
        if eda_col not in header:
            raise ReplayError(f"missing required column {eda_col!r} (have {header})")
        t_col = source.column("t")
        hr_col = source.column("hr")
        label_col = source.column("label")
        has_t = t_col in header
        has_hr = hr_col in header
        has_label = label_col in header
        samples: list[SensorSample] = []
        hr_samples: list[SensorSample] = []
        labels: list[float] = []
        prev_t = -math.inf
        for row_no, row in enumerate(reader, start=2):  # header is line 1
            try:
                eda = float(row[eda_col])
            except (TypeError, ValueError) as exc:
                raise ReplayError(f"row {row_no}: unparseable eda {row.get(eda_col)!r}") from exc
            if has_t:
                try:
                    t = float(row[t_col])
                except (TypeError, ValueError) as exc:
                    raise ReplayError(f"row {row_no}: unparseable t {row.get(t_col)!r}") from exc
                if t <= prev_t:
                    raise ReplayError(f"row {row_no}: non-monotone timestamp {t}")
                prev_t = t
            else:
                t = len(samples) / source.rate_hz
            samples.append(SensorSample(ts=t, kind="eda", values={"eda_uS": eda}))
            if has_hr and row[hr_col] not in (None, ""):
                hr_samples.append(SensorSample(ts=t, kind="hr",
                                               values={"bpm": float(row[hr_col])}))
            if has_label:
                labels.append(_map_label(row[label_col], row_no, source.label_positive))
    return ReplayStream(samples=samples, hr=hr_samples,
                        labels=labels if has_label else None, rate_hz=source.rate_hz)
