import json
import threading
import time

import numpy as np
import pytest

from teach.bus import Broker, Client
from teach.bus import schema
from teach.driver import DriverParams
from teach.orchestrator.loop import BusEpisode, run_direct_episode
from teach.orchestrator.tasks import AgentTask, StressTask
from teach.vehicle import DEFAULT_PROFILES, make_route

from conftest import TEST_AGENT, make_test_config


def make_bus_episode(cfg, esn_model, agent_params, log_path, broker):
    route = make_route(cfg.seed, n_segments=cfg.route.n_segments,
                       length_range=cfg.route.length_range,
                       kappa_range=cfg.route.kappa_range,
                       obstacle_rate=cfg.route.obstacle_rate)
    agent_task = None
    if agent_params is not None:
        agent_task = AgentTask(agent_params, TEST_AGENT, route=route,
                               action_seed=cfg.seed, learn=False, sample_actions=False)
    return BusEpisode(cfg, route=route, stress_task=StressTask(esn_model),
                      agent_task=agent_task, broker=broker, endpoint=None,
                      log_path=log_path), route, agent_task


def test_direct_and_bus_drivers_agree(tmp_path, small_esn_model, small_agent_params):
    cfg = make_test_config(episode_s=40.0)
    direct_rows = []

    route = make_route(cfg.seed, n_segments=cfg.route.n_segments,
                       length_range=cfg.route.length_range,
                       kappa_range=cfg.route.kappa_range,
                       obstacle_rate=cfg.route.obstacle_rate)
    direct_agent = AgentTask(small_agent_params.copy(), TEST_AGENT, route=route,
                             action_seed=cfg.seed, learn=False, sample_actions=False)
    direct = run_direct_episode(
        route=route, profiles=dict(DEFAULT_PROFILES), initial_profile="normal",
        driver_params=DriverParams(), seed=cfg.seed, episode_s=cfg.episode_s,
        stress_task=StressTask(small_esn_model), agent_task=direct_agent,
        on_tick=lambda tick, st, s, est: direct_rows.append((tick, st.v, st.s_pos, s)))

    broker = Broker(port=None).start()
    try:
        episode, _, _ = make_bus_episode(cfg, small_esn_model,
                                         small_agent_params.copy(),
                                         tmp_path / "bus.jsonl", broker)
        outcome = episode.run()
    finally:
        broker.stop()
    assert outcome.summary["fault"] is None
    # full-precision aggregate equality
    assert outcome.summary["distance_m"] == direct["distance_m"]
    assert outcome.summary["stress_oracle_mean"] == direct["stress_oracle_mean"]
    assert outcome.summary["profile_ticks"] == direct["profile_ticks"]
    assert outcome.summary["action_counts"] == direct["action_counts"]
    # per-tick trajectories match through the 9-digit log rounding
    bus_rows = [json.loads(line) for line in open(tmp_path / "bus.jsonl")]
    assert len(bus_rows) == len(direct_rows)
    for (tick, v, s_pos, s), row in zip(direct_rows, bus_rows):
        assert row["vehicle"]["v"] == pytest.approx(v, rel=1e-8, abs=1e-9)
        assert row["vehicle"]["s_pos"] == pytest.approx(s_pos, rel=1e-8)
        assert row["driver"]["s"] == pytest.approx(s, rel=1e-8, abs=1e-9)


def test_bus_run_byte_identical_logs(tmp_path, small_esn_model, small_agent_params):
    logs = []
    for i in range(2):
        cfg = make_test_config(episode_s=25.0)
        broker = Broker(port=None).start()
        try:
            episode, _, _ = make_bus_episode(cfg, small_esn_model,
                                             small_agent_params.copy(),
                                             tmp_path / f"run{i}.jsonl", broker)
            episode.run()
        finally:
            broker.stop()
        logs.append((tmp_path / f"run{i}.jsonl").read_bytes())
    assert logs[0] == logs[1]
    assert len(logs[0]) > 10_000


def test_liveness_stress_tracks_every_sensor_period(tmp_path, small_esn_model,
                                                    small_agent_params):
    cfg = make_test_config(episode_s=30.0)
    broker = Broker(port=None).start()
    try:
        episode, _, _ = make_bus_episode(cfg, small_esn_model, small_agent_params.copy(),
                                         tmp_path / "live.jsonl", broker)
        outcome = episode.run()
        counts = episode.inbox.counts
        history = episode.inbox.history
    finally:
        broker.stop()
    ticks = outcome.summary["ticks"]
    washout = small_esn_model.config.washout
    assert counts[schema.TOPIC_EDA] == ticks // 5
    assert counts[schema.TOPIC_STRESS] == ticks // 5 - washout
    # each stress estimate carries the timestamp of the sensor sample it
    # followed: within one sensor period of every vehicle tick after warm-up
    for j, stress_doc in enumerate(history[schema.TOPIC_STRESS]):
        eda_doc = history[schema.TOPIC_EDA][j + washout]
        assert stress_doc["ts"] == eda_doc["ts"]


def _run_in_thread(episode):
    result = {}

    def target():
        result["outcome"] = episode.run()

    thread = threading.Thread(target=target, daemon=True)
    thread.start()
    return thread, result


def test_pause_and_resume_gate_ticks(tmp_path, small_esn_model, small_agent_params):
    cfg = make_test_config(episode_s=30.0, realtime=True)
    broker = Broker(port=None).start()
    try:
        episode, _, _ = make_bus_episode(cfg, small_esn_model, small_agent_params.copy(),
                                         tmp_path / "pause.jsonl", broker)
        ui = Client("ui", keepalive=0).connect_socket(broker.connect_pipe())
        thread, result = _run_in_thread(episode)
        time.sleep(1.0)
        ui.publish(schema.TOPIC_OVERRIDE, schema.make_override(1.0, "pause", None))
        time.sleep(0.5)
        ticks_at_pause = episode.inbox.counts[schema.TOPIC_VEHICLE]
        time.sleep(1.0)
        assert episode.inbox.counts[schema.TOPIC_VEHICLE] <= ticks_at_pause + 5
        assert episode.paused
        ui.publish(schema.TOPIC_OVERRIDE, schema.make_override(2.0, "resume", None))
        time.sleep(1.5)
        assert episode.inbox.counts[schema.TOPIC_VEHICLE] > ticks_at_pause + 5
        episode.cfg.realtime = False  # let the rest finish fast
        thread.join(timeout=30)
        ui.disconnect()
    finally:
        broker.stop()
    rows = [json.loads(line) for line in open(tmp_path / "pause.jsonl")]
    ts = [row["t"] for row in rows]
    assert ts == sorted(ts) and len(set(ts)) == len(ts)  # strictly increasing
    assert result["outcome"].summary["fault"] is None


def test_stress_override_substitutes_agent_input(tmp_path, small_esn_model,
                                                 small_agent_params):
    cfg = make_test_config(episode_s=30.0, realtime=True)
    broker = Broker(port=None).start()
    try:
        episode, _, agent_task = make_bus_episode(
            cfg, small_esn_model, small_agent_params.copy(),
            tmp_path / "ovr.jsonl", broker)
        ui = Client("ui", keepalive=0).connect_socket(broker.connect_pipe())
        thread, result = _run_in_thread(episode)
        time.sleep(0.5)
        ui.publish(schema.TOPIC_OVERRIDE, schema.make_override(0.5, "stress", 0.7))
        episode.cfg.realtime = False
        thread.join(timeout=30)
        ui.disconnect()
    finally:
        broker.stop()
    assert result["outcome"].summary["fault"] is None
    # the agent's later epoch features saw exactly the override value
    assert agent_task.prev_phi is not None
    assert agent_task.prev_phi[0] == pytest.approx(0.7, abs=1e-12)
    rows = [json.loads(line) for line in open(tmp_path / "ovr.jsonl")]
    assert any({"kind": "stress", "value": 0.7} in row["overrides"] for row in rows)


def test_profile_override_takes_precedence(tmp_path, small_esn_model, small_agent_params):
    cfg = make_test_config(episode_s=30.0, realtime=True)
    broker = Broker(port=None).start()
    try:
        episode, _, _ = make_bus_episode(cfg, small_esn_model, small_agent_params.copy(),
                                         tmp_path / "prof.jsonl", broker)
        ui = Client("ui", keepalive=0).connect_socket(broker.connect_pipe())
        thread, result = _run_in_thread(episode)
        time.sleep(0.5)
        ui.publish(schema.TOPIC_OVERRIDE,
                   schema.make_override(0.5, "profile", "conservative"))
        episode.cfg.realtime = False
        thread.join(timeout=30)
        ui.disconnect()
    finally:
        broker.stop()
    assert result["outcome"].summary["fault"] is None
    rows = [json.loads(line) for line in open(tmp_path / "prof.jsonl")]
    late = [row for row in rows if row["t"] > 2.0]
    assert late and all(row["vehicle"]["profile"] == "conservative" for row in late)


def test_override_target_driver_pins_latent_stress(tmp_path, small_esn_model,
                                                   small_agent_params):
    cfg = make_test_config(episode_s=30.0, realtime=True, override_target="driver")
    broker = Broker(port=None).start()
    try:
        episode, _, agent_task = make_bus_episode(
            cfg, small_esn_model, small_agent_params.copy(),
            tmp_path / "pin.jsonl", broker)
        ui = Client("ui", keepalive=0).connect_socket(broker.connect_pipe())
        thread, result = _run_in_thread(episode)
        time.sleep(0.5)
        ui.publish(schema.TOPIC_OVERRIDE, schema.make_override(0.5, "stress", 0.9))
        time.sleep(0.3)
        episode.cfg.realtime = False
        thread.join(timeout=30)
        ui.disconnect()
    finally:
        broker.stop()
    assert result["outcome"].summary["fault"] is None
    rows = [json.loads(line) for line in open(tmp_path / "pin.jsonl")]
    late = [row for row in rows if row["t"] > 2.0]
    # the plant's latent stress is pinned, so the oracle channel reads 0.9
    assert late and all(row["driver"]["s"] == 0.9 for row in late)
    # and the agent was NOT fed the raw override value directly
    assert agent_task.stress_override is None


def test_oracle_stress_debug_training_mode(tmp_path, small_agent_params):
    from teach.orchestrator.pipelines import cmd_train_agent
    from teach.orchestrator.config import RunConfig, RouteSpec

    out = tmp_path / "agent_oracle.json"
    cfg = RunConfig(mode="train-agent", seed=3, episodes=2, episode_s=30.0,
                    agent_oracle_stress=True, out=str(out),
                    route=RouteSpec(n_segments=10))
    summary = cmd_train_agent(cfg)
    # no detector involved: transitions happen from the very first epochs
    assert summary["transitions"] >= 2 * (30 // 5 - 2)
    assert out.exists()


def test_agent_task_override_reverts_immediately(small_agent_params):
    route = make_route(1, n_segments=5)
    task = AgentTask(small_agent_params.copy(), TEST_AGENT, route=route, action_seed=0)
    task.set_stress_override(0.7)
    task.on_stress(1.0, 0.21)
    assert task.epoch_stress[-1] == (1.0, 0.7)
    task.set_stress_override(None)  # cleared: the very next sample is real
    task.on_stress(1.25, 0.21)
    assert task.epoch_stress[-1] == (1.25, 0.21)


def test_fixed_profile_run_has_no_actions(tmp_path, small_esn_model):
    cfg = make_test_config(episode_s=20.0, fixed_profile="aggressive")
    broker = Broker(port=None).start()
    try:
        episode, _, _ = make_bus_episode(cfg, small_esn_model, None,
                                         tmp_path / "fixed.jsonl", broker)
        outcome = episode.run()
    finally:
        broker.stop()
    assert outcome.summary["fault"] is None
    assert outcome.summary["action_counts"] == {}
    assert set(outcome.summary["profile_ticks"]) == {"aggressive"}
