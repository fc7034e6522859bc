"""Application shell: configuration, artifacts, loop drivers, pipelines."""

from .artifacts import ArtifactError, load_artifact, save_artifact
from .config import ConfigError, RouteSpec, RunConfig, load_config
from .loop import BusEpisode, RuntimeFault, run_direct_episode
from .pipelines import cmd_gen_data, cmd_replay, cmd_run, cmd_train_agent, cmd_train_esn

__all__ = [
    "ArtifactError",
    "BusEpisode",
    "ConfigError",
    "RouteSpec",
    "RunConfig",
    "RuntimeFault",
    "cmd_gen_data",
    "cmd_replay",
    "cmd_run",
    "cmd_train_agent",
    "cmd_train_esn",
    "load_artifact",
    "load_config",
    "run_direct_episode",
    "save_artifact",
]
