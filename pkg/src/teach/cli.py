"""`teach` command line: data generation, training, closed-loop runs, broker
and bridge services.

Exit codes: 0 ok, 2 configuration error, 3 runtime fault. `TEACH_LOG`
controls the log level.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import replace

from .bus import Broker, BrokerLimits
from .orchestrator import (
    ArtifactError,
    ConfigError,
    RuntimeFault,
    cmd_gen_data,
    cmd_replay,
    cmd_run,
    cmd_train_agent,
    cmd_train_esn,
    load_config,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON run configuration file")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--log-dir", dest="log_dir", help="directory for logs/summaries")


def _add_replay_opts(parser: argparse.ArgumentParser):
    parser.add_argument("--map", action="append", default=None, metavar="LOGICAL=COLUMN",
                        help="remap a CSV column, e.g. --map eda=gsr --map t=time")
    parser.add_argument("--rate", dest="replay_rate_hz", type=float,
                        help="declared sample rate in Hz (default 4)")
    parser.add_argument("--label-positive", dest="replay_label_positive", type=int,
                        help="integer class treated as stress=1 (others 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="teach",
        description="Closed-loop driving-style personalization demo stack")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic training episodes")
    _add_common(p)
    p.add_argument("--episodes", type=int, help="number of episodes")
    p.add_argument("--out", required=True, help="output dataset directory")

    p = sub.add_parser("train-esn", help="train the stress detector")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset directory or CSV")
    p.add_argument("--out", required=True, help="output model artifact")
    p.add_argument("--holdout", type=int, help="validation episodes held out")
    _add_replay_opts(p)

    p = sub.add_parser("train-agent", help="train the profile-selection agent")
    _add_common(p)
    p.add_argument("--esn", dest="esn_path", help="stress model artifact")
    p.add_argument("--episodes", type=int, help="training episodes")
    p.add_argument("--beta", type=float, help="progress reward weight")
    p.add_argument("--oracle-stress", dest="agent_oracle_stress", action="store_true",
                   default=None, help="debug mode: feed the agent the latent "
                   "driver stress instead of the detector output")
    p.add_argument("--out", required=True, help="output agent artifact")

    p = sub.add_parser("run", help="run the closed loop over the bus")
    _add_common(p)
    p.add_argument("--esn", dest="esn_path", help="stress model artifact")
    p.add_argument("--agent", dest="agent_path", help="agent artifact")
    p.add_argument("--fixed-profile", dest="fixed_profile",
                   choices=("conservative", "normal", "aggressive"),
                   help="hold one profile instead of an agent")
    p.add_argument("--broker", help="embedded or tcp://host:port")
    p.add_argument("--bridge", help="host:port for the dashboard WebSocket bridge")
    p.add_argument("--episode-s", dest="episode_s", type=float, help="episode length")
    p.add_argument("--realtime", action="store_true", default=None,
                   help="pace the loop against the wall clock")
    p.add_argument("--override-target", dest="override_target",
                   choices=("agent", "driver"),
                   help="where stress overrides land: the agent's input "
                   "(default) or the driver model")
    p.add_argument("--name", help="base name for log/summary files")

    p = sub.add_parser("replay", help="stream a recorded CSV through the stress module")
    _add_common(p)
    p.add_argument("--data", required=True, help="CSV file to replay")
    p.add_argument("--esn", dest="esn_path", help="stress model artifact")
    p.add_argument("--realtime", action="store_true", default=None,
                   help="pace samples at the declared rate")
    _add_replay_opts(p)

    p = sub.add_parser("broker", help="run a standalone broker")
    p.add_argument("--port", type=int, default=1883)
    p.add_argument("--host", default="0.0.0.0")
    p.add_argument("--max-payload", dest="max_payload", type=int, default=256 * 1024)

    p = sub.add_parser("bridge", help="run a standalone dashboard bridge")
    p.add_argument("--broker", required=True, help="tcp://host:port of the bus broker")
    p.add_argument("--bridge", default="127.0.0.1:8787", help="host:port to serve on")
    p.add_argument("--static", help="directory of dashboard files to serve")

    return parser


def _config_from(args: argparse.Namespace, mode: str):
    overrides = {"mode": mode}
    for key in ("seed", "log_dir", "episodes", "out", "data", "esn_path", "agent_path",
                "fixed_profile", "broker", "bridge", "episode_s", "realtime", "holdout",
                "replay_rate_hz", "replay_label_positive", "override_target",
                "agent_oracle_stress"):
        if hasattr(args, key) and getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    if getattr(args, "map", None):
        columns = {}
        for item in args.map:
            logical, _, column = item.partition("=")
            if not logical or not column:
                raise ConfigError(f"--map needs LOGICAL=COLUMN, got {item!r}")
            columns[logical] = column
        overrides["replay_columns"] = columns
    cfg = load_config(getattr(args, "config", None), overrides)
    if getattr(args, "beta", None) is not None:
        cfg.agent = replace(cfg.agent, beta=args.beta)
    if getattr(args, "seed", None) is not None:
        cfg.agent = replace(cfg.agent, seed=args.seed)
        cfg.esn = replace(cfg.esn, seed=args.seed)
    return cfg


def _serve_forever(stoppable, label: str):
    print(f"{label} running; Ctrl-C to stop", file=sys.stderr)
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        pass
    finally:
        stoppable.stop()


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=getattr(logging, os.environ.get("TEACH_LOG", "WARNING").upper(), logging.WARNING),
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        if args.command == "gen-data":
            cmd_gen_data(_config_from(args, "gen-data").validate())
        elif args.command == "train-esn":
            summary = cmd_train_esn(_config_from(args, "train-esn").validate())
            print(f"valid_corr={summary['valid_corr']}")
        elif args.command == "train-agent":
            summary = cmd_train_agent(_config_from(args, "train-agent").validate())
            print(f"transitions={summary['transitions']} "
                  f"final_mean_reward={summary['mean_reward_curve'][-1]:.4f}")
        elif args.command == "run":
            outcome = cmd_run(_config_from(args, "run"), name=args.name)
            print(f"log={outcome.log_path} ticks={outcome.summary['ticks']} "
                  f"final_third_stress={outcome.summary['stress_oracle_thirds'][2]:.4f}")
        elif args.command == "replay":
            summary = cmd_replay(_config_from(args, "replay"))
            print(f"samples={summary['samples']} stress_outputs={summary['stress_outputs']}")
        elif args.command == "broker":
            broker = Broker(host=args.host, port=args.port,
                            limits=BrokerLimits(max_payload=args.max_payload)).start()
            _serve_forever(broker, f"broker on {args.host}:{broker.port}")
        elif args.command == "bridge":
            from .orchestrator.bridge import Bridge
            from .orchestrator.config import RunConfig
            from .orchestrator.loop import make_bus_client
            endpoint = RunConfig(broker=args.broker).broker_endpoint()
            host, _, port = args.bridge.rpartition(":")
            bridge = Bridge(make_bus_client("bridge", None, endpoint),
                            host or "127.0.0.1", int(port), static_dir=args.static)
            bridge.start()
            _serve_forever(bridge, f"bridge on ws://{bridge.endpoint[0]}:{bridge.endpoint[1]}/ws")
        return EXIT_OK
    except (ConfigError, ArtifactError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeFault as exc:
        print(f"runtime fault: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # anything unexpected is a runtime fault
        logging.getLogger("teach").exception("unhandled error")
        print(f"runtime fault: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
