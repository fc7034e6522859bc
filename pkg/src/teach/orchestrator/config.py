"""Run configuration: one JSON document drives every pipeline mode."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from ..agent import AgentConfig
from ..driver import DriverParams
from ..esn import EsnConfig
from ..vehicle import DEFAULT_PROFILES, PROFILE_NAMES, ProfileParams, validate_profiles

MODES = ("gen-data", "train-esn", "train-agent", "run", "replay")

DT = 0.05  # orchestrator clock, 20 Hz


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RouteSpec:
    n_segments: int = 80
    length_range: tuple[float, float] = (80.0, 200.0)
    kappa_range: tuple[float, float] = (0.0, 0.025)
    obstacle_rate: float = 0.05


@dataclass
class RunConfig:
    mode: str = "run"
    seed: int = 0
    broker: str = "embedded"              # "embedded" or "tcp://host:port"
    route: RouteSpec = field(default_factory=RouteSpec)
    profiles: dict = field(default_factory=lambda: dict(DEFAULT_PROFILES))
    driver: DriverParams = field(default_factory=DriverParams)
    esn: EsnConfig = field(default_factory=EsnConfig)
    esn_path: str | None = None
    agent: AgentConfig = field(default_factory=AgentConfig)
    agent_path: str | None = None
    episode_s: float = 300.0
    episodes: int = 25                    # gen-data / train-agent episode count
    holdout: int = 5                      # train-esn validation episodes
    bridge: str | None = None             # "host:port"
    fixed_profile: str | None = None
    initial_profile: str = "normal"
    log_dir: str = "runs"
    out: str | None = None
    data: str | None = None               # dataset dir or csv
    realtime: bool = False
    sample_actions: bool = False
    override_target: str = "agent"       # stress overrides feed "agent" or "driver"
    agent_oracle_stress: bool = False    # train-agent debug mode: bypass the ESN
    replay_columns: dict = field(default_factory=dict)
    replay_rate_hz: float = 4.0
    replay_label_positive: int | None = None

    def broker_endpoint(self) -> tuple[str, int] | None:
        """None for embedded, (host, port) for an external broker."""
        if self.broker == "embedded":
            return None
        if self.broker.startswith("tcp://"):
            rest = self.broker[len("tcp://"):]
            host, _, port = rest.rpartition(":")
            if not host or not port.isdigit():
                raise ConfigError(f"bad broker address {self.broker!r}")
            return host, int(port)
        raise ConfigError(f"broker must be 'embedded' or 'tcp://host:port', got {self.broker!r}")

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.broker_endpoint()
        validate_profiles(self.profiles)
        self.esn.validate()
        self.agent.validate()
        if self.episode_s <= 0:
            raise ConfigError(f"episode_s must be > 0, got {self.episode_s}")
        if self.episodes < 1:
            raise ConfigError(f"episodes must be >= 1, got {self.episodes}")
        if self.fixed_profile is not None and self.fixed_profile not in PROFILE_NAMES:
            raise ConfigError(f"unknown fixed_profile {self.fixed_profile!r}")
        if self.fixed_profile is not None and self.agent_path is not None:
            raise ConfigError("fixed_profile and agent_path are mutually exclusive")
        if self.initial_profile not in PROFILE_NAMES:
            raise ConfigError(f"unknown initial_profile {self.initial_profile!r}")
        if self.mode == "run" and self.fixed_profile is None and self.agent_path is None:
            raise ConfigError("run mode needs an agent artifact or --fixed-profile")
        if self.mode == "run" and self.esn_path is None:
            raise ConfigError("run mode needs an esn artifact (esn_path)")
        if self.override_target not in ("agent", "driver"):
            raise ConfigError(
                f"override_target must be 'agent' or 'driver', got {self.override_target!r}")
        for label, path in (("esn_path", self.esn_path), ("agent_path", self.agent_path),
                            ("data", self.data)):
            if path is not None and not Path(path).exists():
                raise ConfigError(f"{label} does not exist: {path}")
        return self


def _profiles_from_dict(doc: dict) -> dict:
    out = dict(DEFAULT_PROFILES)
    for name, params in doc.items():
        if name not in PROFILE_NAMES:
            raise ConfigError(f"unknown profile {name!r} in config")
        try:
            out[name] = ProfileParams(**params)
        except TypeError as exc:
            raise ConfigError(f"bad params for profile {name!r}: {exc}") from exc
    return out


def _build(doc: dict) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = dict(doc)
    try:
        if "route" in kwargs:
            route = dict(kwargs["route"])
            for key in ("length_range", "kappa_range"):
                if key in route:
                    route[key] = tuple(route[key])
            kwargs["route"] = RouteSpec(**route)
        if "profiles" in kwargs:
            kwargs["profiles"] = _profiles_from_dict(kwargs["profiles"])
        if "driver" in kwargs:
            kwargs["driver"] = DriverParams(**kwargs["driver"])
        if "esn" in kwargs:
            kwargs["esn"] = EsnConfig(**kwargs["esn"])
        if "agent" in kwargs:
            kwargs["agent"] = AgentConfig(**kwargs["agent"])
    except TypeError as exc:
        raise ConfigError(f"bad config structure: {exc}") from exc
    return RunConfig(**kwargs)


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Config file plus CLI overrides (CLI wins); validation is the caller's
    job once the mode is known."""
    doc: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{p}: config must be a JSON object")
    for key, value in (overrides or {}).items():
        if value is not None:
            doc[key] = value
    return _build(doc)
