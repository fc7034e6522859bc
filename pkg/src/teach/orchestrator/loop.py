"""Closed-loop drivers.

``run_direct_episode`` steps the module tasks in-process (training and data
generation). ``BusEpisode`` runs the same tasks as bus-connected module
threads with the orchestrator owning a logical clock: it publishes tick
messages, waits for each module's expected outputs (deterministic barriers),
forwards agent actions as profile commands, applies operator overrides, and
writes one JSONL record per tick. Both drivers sequence identically, so a
seeded run produces the same trajectory over either transport.
"""

from __future__ import annotations

import collections
import logging
import sys
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..bus import Broker, Client
from ..bus import schema
from ..jsonutil import dumps_canonical
from ..vehicle import Route, VehicleSim
from .config import DT, RunConfig
from .tasks import AgentTask, DriverTask, StressTask, eda_index

log = logging.getLogger("teach.orchestrator")

EPOCH_TICKS_DEFAULT = 100  # 5 s at 20 Hz
BARRIER_TIMEOUT_S = 30.0


class RuntimeFault(RuntimeError):
    """A module failed to produce its expected output in time."""


def episode_ticks(episode_s: float, dt: float = DT) -> int:
    return int(round(episode_s / dt))


def thirds(values: np.ndarray) -> list[float | None]:
    """Mean over each third of the sequence; None where no finite samples."""
    if len(values) == 0:
        return [None] * 3
    chunks = np.array_split(np.asarray(values, dtype=float), 3)
    return [float(np.nanmean(c)) if np.any(np.isfinite(c)) else None
            for c in chunks]


# -- in-process driver --------------------------------------------------------

def run_direct_episode(*, route: Route, profiles: dict, initial_profile: str,
                       driver_params, seed: int, episode_s: float, dt: float = DT,
                       stress_task: StressTask | None = None,
                       agent_task: AgentTask | None = None,
                       profile_schedule=None,
                       epoch_ticks: int = EPOCH_TICKS_DEFAULT,
                       oracle_stress_to_agent: bool = False,
                       on_eda=None, on_tick=None) -> dict:
    """One episode with all modules stepped in-process.

    ``profile_schedule(tick) -> profile | None`` can force profile changes
    (data generation); otherwise the agent decides at epoch boundaries.
    """
    vehicle = VehicleSim(route, profiles=profiles, profile=initial_profile, dt=dt)
    driver = DriverTask(driver_params, seed=seed, dt=dt)
    n_ticks = episode_ticks(episode_s, dt)
    latest_est = None
    oracle = np.empty(n_ticks)
    estimates = np.full(n_ticks, np.nan)
    profile_ticks: collections.Counter = collections.Counter()
    action_counts: collections.Counter = collections.Counter()
    for tick in range(1, n_ticks + 1):
        if profile_schedule is not None:
            forced = profile_schedule(tick)
            if forced is not None:
                vehicle.set_profile(forced)
        state = vehicle.step()
        batch = driver.on_vehicle(tick, state)
        if batch.eda is not None:
            est = stress_task.on_eda(batch.eda) if stress_task is not None else None
            if est is not None:
                latest_est = est
            if agent_task is not None:
                if oracle_stress_to_agent:
                    agent_task.on_stress(state.t, driver.sim.s)
                elif est is not None:
                    agent_task.on_stress(state.t, est)
            if on_eda is not None:
                on_eda(tick, state.t, batch.eda, driver.sim.s, est)
        if agent_task is not None:
            agent_task.on_vehicle(state.t, state.v, state.s_pos)
            if tick % epoch_ticks == 0:
                decision = agent_task.on_epoch(state.t, terminal=tick == n_ticks)
                if decision is not None:
                    action_counts[decision.profile] += 1
                    vehicle.set_profile(decision.profile)
        oracle[tick - 1] = driver.sim.s
        if latest_est is not None:
            estimates[tick - 1] = latest_est
        profile_ticks[state.profile] += 1
        if on_tick is not None:
            on_tick(tick, state, driver.sim.s, latest_est)
        if vehicle.exhausted:
            oracle = oracle[:tick]
            estimates = estimates[:tick]
            break
    return {
        "ticks": int(len(oracle)),
        "sim_seconds": float(len(oracle) * dt),
        "distance_m": float(vehicle.state.s_pos),
        "stress_oracle_thirds": thirds(oracle),
        "stress_est_thirds": thirds(estimates),
        "stress_oracle_mean": float(np.mean(oracle)) if len(oracle) else None,
        "profile_ticks": dict(profile_ticks),
        "action_counts": dict(action_counts),
        "route_exhausted": bool(vehicle.exhausted),
        "oracle_s": oracle,
        "stress_est": estimates,
    }


# -- bus plumbing ---------------------------------------------------------------

def make_bus_client(name: str, broker: Broker | None,
                    endpoint: tuple[str, int] | None, keepalive: int = 0) -> Client:
    """Embedded loopback pipe when a broker object is given, TCP otherwise."""
    client = Client(name, keepalive=keepalive)
    if broker is not None:
        return client.connect_socket(broker.connect_pipe())
    host, port = endpoint
    return client.connect_tcp(host, port)


class _BusModule:
    """One module task dispatched on its bus client's reader thread."""

    def __init__(self, name: str, client: Client, subscriptions: list[str]):
        self.name = name
        self.client = client
        self._stop = threading.Event()
        self.error: Exception | None = None
        client.on_message = self._on_message
        for pattern in subscriptions:
            client.subscribe(pattern)

    def start(self):
        pass  # dispatch rides the client reader thread

    def _on_message(self, envelope):
        if self._stop.is_set() or envelope.topic == schema.TOPIC_CTL_STOP:
            return
        try:
            self.dispatch(envelope.topic, envelope.json())
        except Exception as exc:  # surfaced by the orchestrator barrier
            self.error = exc
            log.exception("%s: module error", self.name)
            self._stop.set()

    def dispatch(self, topic: str, doc: dict):
        raise NotImplementedError

    def stop(self):
        self._stop.set()
        self.client.disconnect()


class VehicleModule(_BusModule):
    def __init__(self, client, vehicle: VehicleSim):
        self.vehicle = vehicle
        super().__init__("vehicle", client,
                         [schema.TOPIC_CTL_TICK, schema.TOPIC_CTL_PROFILE])

    def dispatch(self, topic, doc):
        if topic == schema.TOPIC_CTL_TICK:
            tick = int(doc["tick"])
            state = self.vehicle.step()
            self.client.publish(schema.TOPIC_VEHICLE, schema.make_vehicle(
                ts=state.t, seq=tick, v=state.v, a_long=state.a_long,
                a_lat=state.a_lat, jerk=state.jerk, s_pos=state.s_pos,
                kappa=state.kappa, profile=state.profile))
        elif topic == schema.TOPIC_CTL_PROFILE:
            self.vehicle.set_profile(str(doc["profile"]))


class DriverModule(_BusModule):
    def __init__(self, client, task: DriverTask, accept_overrides: bool = False):
        self.task = task
        subs = [schema.TOPIC_VEHICLE]
        if accept_overrides:
            subs.append(schema.TOPIC_OVERRIDE)
        super().__init__("driver", client, subs)

    def dispatch(self, topic, doc):
        if topic == schema.TOPIC_OVERRIDE:
            _, kind, value = schema.parse_override(doc)
            if kind == "stress":
                self.task.set_stress_pin(value)
            return
        parsed = schema.parse_vehicle(doc)
        tick = parsed["seq"]
        state = _vehicle_state_from(parsed)
        batch = self.task.on_vehicle(tick, state)
        ts = state.t
        out = [(schema.TOPIC_TRUTH, schema.make_truth(ts, batch.truth))]
        if batch.eda is not None:
            out.append((schema.TOPIC_EDA, schema.make_eda(ts, eda_index(tick), batch.eda)))
        if batch.hr is not None:
            out.append((schema.TOPIC_HR, schema.make_hr(ts, tick // 20, batch.hr)))
        if batch.au is not None:
            out.append((schema.TOPIC_AU, schema.make_au(ts, tick // 4, batch.au)))
        self.client.publish_many(out)


class StressModule(_BusModule):
    def __init__(self, client, task: StressTask):
        self.task = task
        super().__init__("stress", client, [schema.TOPIC_EDA])

    def dispatch(self, topic, doc):
        ts, _, eda_value = schema.parse_eda(doc)
        est = self.task.on_eda(eda_value)
        if est is not None:
            self.client.publish(schema.TOPIC_STRESS, schema.make_stress(ts, est))


class AgentModule(_BusModule):
    def __init__(self, client, task: AgentTask, n_ticks: int,
                 substitute_overrides: bool = True):
        self.task = task
        self.n_ticks = n_ticks
        self.substitute_overrides = substitute_overrides
        super().__init__("agent", client, [
            schema.TOPIC_VEHICLE, schema.TOPIC_STRESS,
            schema.TOPIC_OVERRIDE, schema.TOPIC_CTL_EPOCH])

    def dispatch(self, topic, doc):
        if topic == schema.TOPIC_VEHICLE:
            self.task.on_vehicle(doc["ts"], doc["v"], doc["s_pos"])
        elif topic == schema.TOPIC_STRESS:
            self.task.on_stress(doc["ts"], doc["stress"])
        elif topic == schema.TOPIC_OVERRIDE:
            if not self.substitute_overrides:
                return
            _, kind, value = schema.parse_override(doc)
            if kind == "stress":
                self.task.set_stress_override(value)
        elif topic == schema.TOPIC_CTL_EPOCH:
            tick = int(doc["tick"])
            decision = self.task.on_epoch(float(doc["ts"]),
                                          terminal=tick >= self.n_ticks)
            if decision is not None:
                self.client.publish(schema.TOPIC_ACTION, schema.make_action(
                    float(doc["ts"]), decision.profile, decision.probs))


def _vehicle_state_from(parsed: dict):
    from ..vehicle import VehicleState
    return VehicleState(t=parsed["ts"], s_pos=parsed["s_pos"], v=parsed["v"],
                        a_long=parsed["a_long"], a_lat=parsed["a_lat"],
                        jerk=parsed["jerk"], kappa=parsed["kappa"],
                        profile=parsed["profile"])


class Inbox:
    """The orchestrator's view of the bus: per-topic message history (arrival
    order equals per-publisher seq order) plus a queue of operator overrides.
    Runs on the orchestrator client's reader thread."""

    def __init__(self, client: Client):
        self.client = client
        self.cond = threading.Condition()
        self.counts: collections.Counter = collections.Counter()
        self.history: dict[str, list[dict]] = collections.defaultdict(list)
        self.overrides: collections.deque = collections.deque()
        client.on_message = self._on_message

    def _on_message(self, envelope):
        try:
            doc = envelope.json()
        except Exception:
            return
        with self.cond:
            self.counts[envelope.topic] += 1
            self.history[envelope.topic].append(doc)
            if envelope.topic == schema.TOPIC_OVERRIDE:
                self.overrides.append(doc)
            self.cond.notify_all()

    @property
    def latest(self) -> dict[str, dict]:
        return {topic: docs[-1] for topic, docs in self.history.items() if docs}

    def nth(self, topic: str, index: int) -> dict | None:
        docs = self.history.get(topic)
        if docs is None or index < 0 or index >= len(docs):
            return None
        return docs[index]

    def wait_counts(self, targets: dict[str, int], timeout: float) -> str | None:
        """Block until every topic reaches its count; returns the lagging
        topic on timeout, None on success."""
        deadline = time.monotonic() + timeout
        with self.cond:
            while True:
                lagging = [t for t, n in targets.items() if self.counts[t] < n]
                if not lagging:
                    return None
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return lagging[0]
                self.cond.wait(timeout=min(remaining, 0.5))

    def drain_overrides(self) -> list[dict]:
        with self.cond:
            out = list(self.overrides)
            self.overrides.clear()
        return out

    def stop(self):
        self.client.on_message = None


@dataclass
class EpisodeOutcome:
    summary: dict
    log_path: Path | None = None
    rows: int = 0


class BusEpisode:
    """One `run`-mode episode over the bus with the orchestrator clock."""

    def __init__(self, cfg: RunConfig, *, route: Route, stress_task: StressTask,
                 agent_task: AgentTask | None, broker: Broker | None,
                 endpoint: tuple[str, int] | None, log_path: Path | None,
                 dt: float = DT, epoch_ticks: int = EPOCH_TICKS_DEFAULT,
                 barrier_timeout: float = BARRIER_TIMEOUT_S):
        self.cfg = cfg
        self.route = route
        self.dt = dt
        self.epoch_ticks = epoch_ticks
        self.barrier_timeout = barrier_timeout
        self.n_ticks = episode_ticks(cfg.episode_s, dt)
        self.log_path = log_path
        initial = cfg.fixed_profile or cfg.initial_profile
        vehicle = VehicleSim(route, profiles=cfg.profiles, profile=initial, dt=dt)
        driver = DriverTask(cfg.driver, seed=cfg.seed, dt=dt)
        overrides_to_driver = cfg.override_target == "driver"
        self.modules: list[_BusModule] = [
            VehicleModule(make_bus_client("veh", broker, endpoint), vehicle),
            DriverModule(make_bus_client("drv", broker, endpoint), driver,
                         accept_overrides=overrides_to_driver),
            StressModule(make_bus_client("esn", broker, endpoint), stress_task),
        ]
        self.agent_module: AgentModule | None = None
        if agent_task is not None:
            self.agent_module = AgentModule(
                make_bus_client("agent", broker, endpoint), agent_task, self.n_ticks,
                substitute_overrides=not overrides_to_driver)
            self.modules.append(self.agent_module)
        # the orchestrator's client must connect LAST: broker routing follows
        # session order, so every module sees a message before the inbox
        # counts it and a barrier can pass
        self.orch = make_bus_client("orch", broker, endpoint)
        self.orch.subscribe(schema.ALL_TOPICS_FILTER)
        self.inbox = Inbox(self.orch)
        self.washout = stress_task.washout
        self.active: dict[str, object] = {}   # kind -> value for stress/profile
        self.paused = False
        self.overrides_seen = 0
        self.action_counts: collections.Counter = collections.Counter()

    # expectations -------------------------------------------------------

    def _expected_after(self, tick: int) -> dict[str, int]:
        need = {schema.TOPIC_VEHICLE: tick, schema.TOPIC_TRUTH: tick,
                schema.TOPIC_EDA: tick // 5, schema.TOPIC_HR: tick // 20,
                schema.TOPIC_AU: tick // 4}
        need[schema.TOPIC_STRESS] = max(0, tick // 5 - self.washout)
        return need

    def _apply_overrides(self):
        for doc in self.inbox.drain_overrides():
            try:
                _, kind, value = schema.parse_override(doc)
            except schema.SchemaError as exc:
                log.warning("ignoring malformed override: %s", exc)
                continue
            self.overrides_seen += 1
            if kind == "pause":
                self.paused = True
            elif kind == "resume":
                self.paused = False
            elif value is None:
                self.active.pop(kind, None)
            else:
                self.active[kind] = value
                if kind == "profile":
                    self.orch.publish(schema.TOPIC_CTL_PROFILE,
                                      schema.make_ctl_profile(self._t, value))

    def _active_overrides_field(self) -> list[dict]:
        return [{"kind": kind, "value": self.active[kind]}
                for kind in sorted(self.active)]

    # main loop ------------------------------------------------------------
    # Ticks are issued in groups up to the next sensor-grid boundary with one
    # barrier per group: the module pipeline stays busy instead of running in
    # lockstep, and per-tick rows are rebuilt afterwards from the inbox
    # history (arrival order is per-publisher seq order).

    TICK_GROUP = 10

    def run(self) -> EpisodeOutcome:
        # many short-lived cross-thread handoffs per tick: a small switch
        # interval keeps wakeup latency out of the critical path
        switch_interval = sys.getswitchinterval()
        sys.setswitchinterval(0.0005)
        try:
            return self._run()
        finally:
            sys.setswitchinterval(switch_interval)

    def _run(self) -> EpisodeOutcome:
        for module in self.modules:
            module.start()
        rows = 0
        fault: str | None = None
        wall_start = time.monotonic()
        self._t = 0.0
        log_file = open(self.log_path, "w", encoding="utf-8") if self.log_path else None
        profile_ticks: collections.Counter = collections.Counter()
        oracle: list[float] = []
        estimates: list[float] = []
        exhausted = False
        try:
            tick = 0
            while tick < self.n_ticks and not exhausted:
                self._apply_overrides()
                if self.paused:
                    time.sleep(0.01)
                    wall_start += 0.01  # keep realtime pacing anchored
                    continue
                group_end = min(self.n_ticks, tick + self.TICK_GROUP)
                self.orch.publish_many(
                    [(schema.TOPIC_CTL_TICK, schema.make_tick(k * self.dt, k))
                     for k in range(tick + 1, group_end + 1)])
                self._t = group_end * self.dt
                lagging = self.inbox.wait_counts(self._expected_after(group_end),
                                                 self.barrier_timeout)
                if lagging is not None:
                    fault = self._fault_for(lagging)
                    break
                if self.agent_module is not None and group_end % self.epoch_ticks == 0:
                    fault = self._run_epoch(group_end)
                    if fault:
                        break
                for k in range(tick + 1, group_end + 1):
                    row = self._row_for_tick(k, group_end)
                    profile_ticks[row["vehicle"]["profile"]] += 1
                    oracle.append(row["driver"]["s"])
                    estimates.append(row["stress_est"]
                                     if row["stress_est"] is not None else float("nan"))
                    if log_file is not None:
                        log_file.write(dumps_canonical(row, floats="g9") + "\n")
                    rows += 1
                    if row["vehicle"]["s_pos"] >= self.route.total_length:
                        exhausted = True
                        break
                tick = group_end
                if self.cfg.realtime:
                    lead = self._t - (time.monotonic() - wall_start)
                    if lead > 0:
                        time.sleep(lead)
        finally:
            if log_file is not None:
                log_file.close()
            self._shutdown()
        oracle_arr = np.array(oracle)
        est_arr = np.array(estimates)
        last_vehicle = self.inbox.latest.get(schema.TOPIC_VEHICLE, {})
        summary = {
            "ticks": rows,
            "sim_seconds": float(rows * self.dt),
            "distance_m": float(last_vehicle.get("s_pos", 0.0)),
            "stress_oracle_thirds": thirds(oracle_arr),
            "stress_est_thirds": thirds(est_arr),
            "stress_oracle_mean": float(np.mean(oracle_arr)) if rows else None,
            "profile_ticks": dict(profile_ticks),
            "action_counts": dict(self.action_counts),
            "overrides_seen": self.overrides_seen,
            "fault": fault,
            "route_exhausted": exhausted,
            "wall_s": round(time.monotonic() - wall_start, 3),
        }
        return EpisodeOutcome(summary=summary, log_path=self.log_path, rows=rows)

    def _fault_for(self, topic: str) -> str:
        for module in self.modules:
            if module.error is not None:
                return f"{module.name}: {module.error}"
        return f"timeout waiting for {topic}"

    def _run_epoch(self, tick: int) -> str | None:
        epoch_no = tick // self.epoch_ticks
        before = self.inbox.counts[schema.TOPIC_ACTION]
        self.orch.publish(schema.TOPIC_CTL_EPOCH,
                          schema.make_ctl_epoch(self._t, tick, epoch_no))
        expect_action = (tick < self.n_ticks
                         and tick // 5 >= self.washout + 1)
        if not expect_action:
            return None
        lagging = self.inbox.wait_counts({schema.TOPIC_ACTION: before + 1},
                                         self.barrier_timeout)
        if lagging is not None:
            return self._fault_for(lagging)
        action = self.inbox.latest[schema.TOPIC_ACTION]
        self.action_counts[action["profile"]] += 1
        profile = self.active.get("profile", action["profile"])
        self.orch.publish(schema.TOPIC_CTL_PROFILE,
                          schema.make_ctl_profile(self._t, profile))
        return None

    def _row_for_tick(self, tick: int, group_end: int) -> dict:
        """Per-tick record rebuilt from message history: the k-th vehicle and
        truth messages belong to tick k; sensor streams map through their
        grids; the stress stream starts after the washout."""
        vehicle = schema.parse_vehicle(self.inbox.nth(schema.TOPIC_VEHICLE, tick - 1))
        truth = self.inbox.nth(schema.TOPIC_TRUTH, tick - 1)["s"]
        eda_doc = self.inbox.nth(schema.TOPIC_EDA, tick // 5 - 1)
        hr_doc = self.inbox.nth(schema.TOPIC_HR, tick // 20 - 1)
        au_doc = self.inbox.nth(schema.TOPIC_AU, tick // 4 - 1)
        stress_doc = self.inbox.nth(schema.TOPIC_STRESS, tick // 5 - self.washout - 1)
        # actions change only at epoch boundaries, which end a group; the
        # boundary row itself shows the fresh action (published just before)
        action_doc = self.inbox.nth(schema.TOPIC_ACTION,
                                    self._actions_published_by(tick) - 1)
        return {
            "t": vehicle["ts"],
            "vehicle": {k: vehicle[k] for k in
                        ("v", "a_long", "a_lat", "jerk", "s_pos", "kappa", "profile")},
            "driver": {"s": truth},
            "sensors": {
                "eda": eda_doc["eda_uS"] if eda_doc else None,
                "hr": hr_doc["bpm"] if hr_doc else None,
                "au": au_doc["au"] if au_doc else None,
            },
            "stress_est": stress_doc["stress"] if stress_doc else None,
            "action": ({"profile": action_doc["profile"], "probs": action_doc["probs"]}
                       if action_doc else None),
            "overrides": self._active_overrides_field(),
        }

    def _actions_published_by(self, tick: int) -> int:
        """Actions published at epoch boundaries <= tick: boundaries before
        the detector warmed up and the terminal boundary publish none."""
        first_stress_tick = (self.washout + 1) * 5
        b0 = -(-first_stress_tick // self.epoch_ticks) * self.epoch_ticks
        last = min(tick, self.n_ticks - 1)
        if self.agent_module is None or last < b0:
            return 0
        return last // self.epoch_ticks - b0 // self.epoch_ticks + 1

    def _shutdown(self):
        # ordered: sensors -> learning modules -> sim -> orchestrator client
        try:
            self.orch.publish(schema.TOPIC_CTL_STOP, b"{}")
        except Exception:
            pass
        order = {"driver": 0, "stress": 1, "agent": 2, "vehicle": 3}
        for module in sorted(self.modules, key=lambda m: order.get(m.name, 9)):
            try:
                module.stop()
            except Exception:
                pass
        self.inbox.stop()
        try:
            self.orch.disconnect()
        except Exception:
            pass
