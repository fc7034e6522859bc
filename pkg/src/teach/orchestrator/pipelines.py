"""Pipeline commands behind the CLI: data generation, training, closed-loop
runs, and recorded replay."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .. import agent as agent_mod
from .. import esn as esn_mod
from ..bus import Broker
from ..bus import schema
from ..driver import ReplaySource, load_replay
from ..jsonutil import dumps_canonical, format_float
from ..vehicle import PROFILE_NAMES, make_route
from .artifacts import load_artifact, save_artifact
from .config import DT, ConfigError, RunConfig
from .loop import (
    BusEpisode,
    EpisodeOutcome,
    Inbox,
    RuntimeFault,
    StressModule,
    episode_ticks,
    make_bus_client,
    run_direct_episode,
)
from .tasks import AgentTask, StressTask, derive_seed

log = logging.getLogger("teach.pipelines")

SCHEDULE_SWITCH_S = 15.0  # gen-data random profile schedule period


def _route_for(cfg: RunConfig, seed: int):
    spec = cfg.route
    return make_route(seed, n_segments=spec.n_segments, length_range=spec.length_range,
                      kappa_range=spec.kappa_range, obstacle_rate=spec.obstacle_rate)


def _schedule(seed: int, n_ticks: int, dt: float):
    """Pre-drawn random profile switch schedule (every SCHEDULE_SWITCH_S)."""
    period = int(round(SCHEDULE_SWITCH_S / dt))
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(41,)))
    n_windows = n_ticks // period + 2
    choices = [PROFILE_NAMES[int(rng.integers(0, len(PROFILE_NAMES)))]
               for _ in range(n_windows)]

    def fn(tick: int) -> str | None:
        if (tick - 1) % period == 0:
            return choices[(tick - 1) // period]
        return None

    return fn


# -- gen-data -----------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig) -> Path:
    """Simulate seeded episodes under a random profile schedule; write one
    CSV of (t, eda, label=latent stress) per episode plus a manifest."""
    if cfg.out is None:
        raise ConfigError("gen-data needs --out <directory>")
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_ticks = episode_ticks(cfg.episode_s)
    files = []
    for ep in range(cfg.episodes):
        ep_seed = derive_seed(cfg.seed, 100, ep)
        rows: list[str] = []

        def on_eda(tick, ts, eda_value, oracle_s, est):
            rows.append(f"{format_float(ts, 'repr')},{format_float(eda_value, 'repr')},"
                        f"{format_float(oracle_s, 'repr')}")

        run_direct_episode(
            route=_route_for(cfg, ep_seed), profiles=cfg.profiles,
            initial_profile=cfg.initial_profile, driver_params=cfg.driver,
            seed=ep_seed, episode_s=cfg.episode_s,
            profile_schedule=_schedule(ep_seed, n_ticks, DT), on_eda=on_eda)
        name = f"episode_{ep:03d}.csv"
        (out_dir / name).write_text("t,eda,label\n" + "\n".join(rows) + "\n",
                                    encoding="utf-8")
        files.append(name)
    manifest = {
        "kind": "dataset", "version": 1, "episodes": cfg.episodes, "seed": cfg.seed,
        "episode_s": cfg.episode_s, "dt": DT, "schedule_switch_s": SCHEDULE_SWITCH_S,
        "files": files, "route": asdict(cfg.route),
        "driver": asdict(cfg.driver),
        "profiles": {name: asdict(p) for name, p in cfg.profiles.items()},
    }
    (out_dir / "manifest.json").write_text(
        dumps_canonical(manifest, floats="repr") + "\n", encoding="utf-8")
    log.info("wrote %d episodes to %s", cfg.episodes, out_dir)
    return out_dir


# -- train-esn ----------------------------------------------------------------

def _load_dataset(cfg: RunConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    data = Path(cfg.data) if cfg.data else None
    if data is None:
        raise ConfigError("train-esn needs --data <dir|csv>")
    paths: list[Path]
    if data.is_dir():
        paths = sorted(data.glob("episode_*.csv")) or sorted(data.glob("*.csv"))
        if not paths:
            raise ConfigError(f"no CSV episodes found in {data}")
    else:
        paths = [data]
    episodes = []
    for path in paths:
        stream = load_replay(ReplaySource(
            path=str(path), rate_hz=cfg.replay_rate_hz, columns=cfg.replay_columns,
            label_positive=cfg.replay_label_positive))
        if stream.labels is None:
            raise ConfigError(f"{path}: no label column; cannot train")
        eda = np.array([s.values["eda_uS"] for s in stream.samples])
        episodes.append((eda, np.asarray(stream.labels, dtype=float)))
    return episodes


def cmd_train_esn(cfg: RunConfig) -> dict:
    if cfg.out is None:
        raise ConfigError("train-esn needs --out <file>")
    episodes = _load_dataset(cfg)
    holdout = min(cfg.holdout, max(0, len(episodes) - 1))
    train_eps = episodes[:len(episodes) - holdout] if holdout else episodes
    valid_eps = episodes[len(episodes) - holdout:] if holdout else []
    started = time.monotonic()
    model, report = esn_mod.train_esn(train_eps, valid_eps, cfg.esn)
    digest = save_artifact(esn_mod.model_to_doc(model), cfg.out)
    summary = {
        "train_mse": report.train_mse,
        "train_columns": report.train_columns,
        "valid_corr": report.valid_corr,
        "valid_corr_per_episode": report.valid_corr_per_episode,
        "backend": report.backend,
        "n_train_episodes": len(train_eps),
        "n_valid_episodes": len(valid_eps),
        "artifact_digest": digest,
        "wall_s": round(time.monotonic() - started, 3),
    }
    Path(str(cfg.out) + ".report.json").write_text(
        dumps_canonical(summary, floats="g9") + "\n", encoding="utf-8")
    log.info("esn trained: mse=%.6f valid_corr=%s", report.train_mse, report.valid_corr)
    return summary


# -- train-agent ----------------------------------------------------------------

def cmd_train_agent(cfg: RunConfig) -> dict:
    if cfg.out is None:
        raise ConfigError("train-agent needs --out <file>")
    esn_model = None
    if not cfg.agent_oracle_stress:
        if cfg.esn_path is None:
            raise ConfigError("train-agent needs --esn <esn artifact> "
                              "(or --oracle-stress for the debug mode)")
        esn_model = esn_mod.model_from_doc(load_artifact(cfg.esn_path, expected_kind="esn"))
    agent_config = cfg.agent.validate()
    params = agent_mod.init_params(agent_config)
    task = AgentTask(params, agent_config, route=_route_for(cfg, cfg.seed),
                     action_seed=cfg.seed, learn=True, sample_actions=True)
    started = time.monotonic()
    reward_curve = []
    for ep in range(cfg.episodes):
        ep_seed = derive_seed(cfg.seed, 200, ep)
        task.route = _route_for(cfg, ep_seed)
        task.reset_episode()
        rewards_before = len(task.rewards)
        run_direct_episode(
            route=task.route, profiles=cfg.profiles,
            initial_profile=cfg.initial_profile, driver_params=cfg.driver,
            seed=ep_seed, episode_s=cfg.episode_s,
            stress_task=StressTask(esn_model) if esn_model is not None else None,
            agent_task=task, oracle_stress_to_agent=cfg.agent_oracle_stress)
        new_rewards = task.rewards[rewards_before:]
        reward_curve.append(float(np.mean(new_rewards)) if new_rewards else 0.0)
    digest = save_artifact(agent_mod.params_to_doc(params, agent_config), cfg.out)
    summary = {
        "episodes": cfg.episodes,
        "seed": cfg.seed,
        "beta": agent_config.beta,
        "mean_reward_curve": reward_curve,
        "transitions": len(task.rewards),
        "faults": params.faults,
        "features_visited": [[float(x) for x in phi] for phi in task.features_log],
        "artifact_digest": digest,
        "wall_s": round(time.monotonic() - started, 3),
    }
    Path(str(cfg.out) + ".report.json").write_text(
        dumps_canonical(summary, floats="g9") + "\n", encoding="utf-8")
    log.info("agent trained: %d episodes, final mean reward %.4f",
             cfg.episodes, reward_curve[-1] if reward_curve else float("nan"))
    return summary


# -- run ------------------------------------------------------------------------

def cmd_run(cfg: RunConfig, name: str | None = None) -> EpisodeOutcome:
    cfg.validate()
    esn_model = esn_mod.model_from_doc(load_artifact(cfg.esn_path, expected_kind="esn"))
    agent_task = None
    route = _route_for(cfg, cfg.seed)
    if cfg.agent_path is not None:
        params, agent_config = agent_mod.params_from_doc(
            load_artifact(cfg.agent_path, expected_kind="agent"))
        agent_task = AgentTask(params, agent_config, route=route,
                               action_seed=cfg.seed, learn=False,
                               sample_actions=cfg.sample_actions)
    log_dir = Path(cfg.log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    base = name or f"run_seed{cfg.seed}"
    log_path = log_dir / f"{base}.jsonl"
    summary_path = log_dir / f"{base}.summary.json"
    endpoint = cfg.broker_endpoint()
    broker = None
    bridge = None
    try:
        if endpoint is None:
            broker = Broker(port=None).start()
        episode = BusEpisode(cfg, route=route, stress_task=StressTask(esn_model),
                             agent_task=agent_task, broker=broker, endpoint=endpoint,
                             log_path=log_path)
        if cfg.bridge:
            from .bridge import Bridge
            host, _, port = cfg.bridge.rpartition(":")
            bridge = Bridge(make_bus_client("bridge", broker, endpoint),
                            host or "127.0.0.1", int(port))
            bridge.start()
        outcome = episode.run()
    finally:
        if bridge is not None:
            bridge.stop()
        if broker is not None:
            broker.stop()
    summary_path.write_text(dumps_canonical(outcome.summary, floats="g9") + "\n",
                            encoding="utf-8")
    if outcome.summary.get("fault"):
        raise RuntimeFault(outcome.summary["fault"])
    log.info("run complete: %s (%d rows)", log_path, outcome.rows)
    return outcome


# -- replay ---------------------------------------------------------------------

def cmd_replay(cfg: RunConfig, name: str | None = None) -> dict:
    """Stream a recorded CSV through the bus and the stress module."""
    if cfg.data is None:
        raise ConfigError("replay needs --data <csv>")
    if cfg.esn_path is None:
        raise ConfigError("replay needs an esn artifact (esn_path)")
    esn_model = esn_mod.model_from_doc(load_artifact(cfg.esn_path, expected_kind="esn"))
    stream = load_replay(ReplaySource(
        path=cfg.data, rate_hz=cfg.replay_rate_hz, columns=cfg.replay_columns,
        label_positive=cfg.replay_label_positive))
    log_dir = Path(cfg.log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    base = name or f"replay_{Path(cfg.data).stem}"
    log_path = log_dir / f"{base}.jsonl"
    endpoint = cfg.broker_endpoint()
    broker = Broker(port=None).start() if endpoint is None else None
    stress_count = 0
    washout = esn_model.config.washout
    rows = []
    try:
        stress_module = StressModule(make_bus_client("esn", broker, endpoint),
                                     StressTask(esn_model))
        publisher = make_bus_client("replay", broker, endpoint)
        orch = make_bus_client("orch", broker, endpoint)
        orch.subscribe(schema.ALL_TOPICS_FILTER)
        inbox = Inbox(orch)
        stress_module.start()
        period = 1.0 / cfg.replay_rate_hz
        for i, sample in enumerate(stream.samples, start=1):
            eda_value = sample.values["eda_uS"]
            publisher.publish(schema.TOPIC_EDA,
                              schema.make_eda(sample.ts, i, eda_value))
            expected = {schema.TOPIC_EDA: i}
            if i >= washout + 1:
                stress_count += 1
                expected[schema.TOPIC_STRESS] = stress_count
            lagging = inbox.wait_counts(expected, timeout=10.0)
            if lagging is not None:
                raise RuntimeFault(f"timeout waiting for {lagging}")
            est = (inbox.latest[schema.TOPIC_STRESS]["stress"]
                   if stress_count else None)
            row = {"t": sample.ts, "eda": eda_value, "stress_est": est}
            if stream.labels is not None:
                row["label"] = stream.labels[i - 1]
            rows.append(row)
            if cfg.realtime:
                time.sleep(period)
        stress_module.stop()
        publisher.disconnect()
        inbox.stop()
        orch.disconnect()
    finally:
        if broker is not None:
            broker.stop()
    with open(log_path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(dumps_canonical(row, floats="g9") + "\n")
    summary = {"samples": len(rows), "stress_outputs": stress_count,
               "log": str(log_path)}
    if stream.labels is not None and stress_count >= 2:
        pairs = [(r["stress_est"], r["label"]) for r in rows if r["stress_est"] is not None]
        est = np.array([p[0] for p in pairs])
        lab = np.array([p[1] for p in pairs])
        if est.std() > 0 and lab.std() > 0:
            summary["corr_vs_label"] = float(np.corrcoef(est, lab)[0, 1])
    log.info("replay complete: %d samples -> %s", len(rows), log_path)
    return summary
