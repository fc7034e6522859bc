"""Bus topic names, the Envelope type, and JSON payload schemas.

Every module on the bus speaks these topics. Data payloads carry "ts"
(simulation seconds) and, for per-publisher streams, a monotone "seq".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import json

from ..jsonutil import dumps_canonical
from .topics import validate_topic

TOPIC_EDA = "teaching/sensors/eda"
TOPIC_HR = "teaching/sensors/hr"
TOPIC_AU = "teaching/sensors/au"
TOPIC_VEHICLE = "teaching/vehicle/state"
TOPIC_STRESS = "teaching/lm/stress"
TOPIC_ACTION = "teaching/lm/action"
TOPIC_TRUTH = "teaching/driver/truth"
TOPIC_OVERRIDE = "teaching/ui/override"

# Plumbing topics for the orchestrator's logical clock and profile commands.
TOPIC_CTL_TICK = "teaching/ctl/tick"
TOPIC_CTL_EPOCH = "teaching/ctl/epoch"
TOPIC_CTL_PROFILE = "teaching/ctl/profile"
TOPIC_CTL_STOP = "teaching/ctl/stop"

ALL_TOPICS_FILTER = "teaching/#"
UI_FILTER = "teaching/ui/#"

MAX_PAYLOAD_BYTES = 256 * 1024

OVERRIDE_KINDS = ("stress", "profile", "pause", "resume")


class SchemaError(ValueError):
    """Payload fails the topic's schema."""


@dataclass(frozen=True)
class Envelope:
    """One timestamped message on the bus."""

    topic: str
    payload: bytes
    qos: int = 0
    dup: bool = False

    def __post_init__(self):
        validate_topic(self.topic)
        if self.qos not in (0, 1):
            raise SchemaError(f"qos must be 0 or 1, got {self.qos}")
        if len(self.payload) > MAX_PAYLOAD_BYTES:
            raise SchemaError(f"payload {len(self.payload)} bytes exceeds {MAX_PAYLOAD_BYTES}")

    def json(self) -> dict:
        try:
            doc = json.loads(self.payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise SchemaError(f"payload is not JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise SchemaError("payload must be a JSON object")
        return doc


def _pack(doc: dict) -> bytes:
    # full-precision floats: modules downstream compute on these values, so
    # the wire must not round (the 9-digit policy applies to log files)
    return dumps_canonical(doc, floats="repr").encode("utf-8")


def make_eda(ts: float, seq: int, eda_us: float) -> bytes:
    return _pack({"ts": float(ts), "seq": int(seq), "eda_uS": float(eda_us)})


def make_hr(ts: float, seq: int, bpm: float) -> bytes:
    return _pack({"ts": float(ts), "seq": int(seq), "bpm": float(bpm)})


def make_au(ts: float, seq: int, au: dict[str, float]) -> bytes:
    return _pack({"ts": float(ts), "seq": int(seq), "au": {k: float(v) for k, v in au.items()}})


def make_vehicle(ts: float, seq: int, v: float, a_long: float, a_lat: float,
                 jerk: float, s_pos: float, kappa: float, profile: str) -> bytes:
    return _pack({
        "ts": float(ts), "seq": int(seq), "v": float(v), "a_long": float(a_long),
        "a_lat": float(a_lat), "jerk": float(jerk), "s_pos": float(s_pos),
        "kappa": float(kappa), "profile": profile,
    })


def make_stress(ts: float, stress: float) -> bytes:
    if not 0.0 <= stress <= 1.0:
        raise SchemaError(f"stress must be in [0,1], got {stress}")
    return _pack({"ts": float(ts), "stress": float(stress)})


def make_action(ts: float, profile: str, probs: list[float]) -> bytes:
    if len(probs) != 3:
        raise SchemaError("probs must have 3 entries")
    return _pack({"ts": float(ts), "profile": profile, "probs": [float(p) for p in probs]})


def make_truth(ts: float, s: float) -> bytes:
    return _pack({"ts": float(ts), "s": float(s)})


def make_override(ts: float, kind: str, value: float | str | None) -> bytes:
    if kind not in OVERRIDE_KINDS:
        raise SchemaError(f"unknown override kind: {kind!r}")
    return _pack({"ts": float(ts), "kind": kind, "value": value})


def make_tick(ts: float, tick: int) -> bytes:
    return _pack({"ts": float(ts), "tick": int(tick)})


def make_ctl_epoch(ts: float, tick: int, epoch: int) -> bytes:
    return _pack({"ts": float(ts), "tick": int(tick), "epoch": int(epoch)})


def make_ctl_profile(ts: float, profile: str) -> bytes:
    return _pack({"ts": float(ts), "profile": profile})


def _require(doc: dict, key: str, types) -> object:
    if key not in doc:
        raise SchemaError(f"missing field {key!r}")
    value = doc[key]
    if not isinstance(value, types):
        raise SchemaError(f"field {key!r} has wrong type {type(value).__name__}")
    return value


def parse_eda(doc: dict) -> tuple[float, int, float]:
    return (
        float(_require(doc, "ts", (int, float))),
        int(_require(doc, "seq", int)),
        float(_require(doc, "eda_uS", (int, float))),
    )


def parse_stress(doc: dict) -> tuple[float, float]:
    stress = float(_require(doc, "stress", (int, float)))
    if not 0.0 <= stress <= 1.0:
        raise SchemaError(f"stress out of range: {stress}")
    return float(_require(doc, "ts", (int, float))), stress


def parse_vehicle(doc: dict) -> dict:
    out = {}
    for key in ("ts", "v", "a_long", "a_lat", "jerk", "s_pos", "kappa"):
        out[key] = float(_require(doc, key, (int, float)))
    out["seq"] = int(_require(doc, "seq", int))
    out["profile"] = str(_require(doc, "profile", str))
    return out


def parse_override(doc: dict) -> tuple[float, str, float | str | None]:
    ts = float(_require(doc, "ts", (int, float)))
    kind = _require(doc, "kind", str)
    if kind not in OVERRIDE_KINDS:
        raise SchemaError(f"unknown override kind: {kind!r}")
    value = doc.get("value")
    if kind == "stress" and value is not None:
        if not isinstance(value, (int, float)):
            raise SchemaError("stress override value must be a number")
        value = min(1.0, max(0.0, float(value)))
    if kind == "profile" and value is not None and not isinstance(value, str):
        raise SchemaError("profile override value must be a string")
    return ts, kind, value


def parse_action(doc: dict) -> tuple[float, str, list[float]]:
    ts = float(_require(doc, "ts", (int, float)))
    profile = str(_require(doc, "profile", str))
    probs = _require(doc, "probs", list)
    if len(probs) != 3 or not all(isinstance(p, (int, float)) for p in probs):
        raise SchemaError("probs must be 3 numbers")
    return ts, profile, [float(p) for p in probs]
