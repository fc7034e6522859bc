"""Kinematic vehicle plant: 1-D route following under a driving profile.

The vehicle tracks a target speed derived from the profile's speed cap and
lateral-acceleration limit against upcoming curvature (lookahead window),
with proportional longitudinal control clamped to the profile's acceleration
and braking limits. Obstacles force temporary slowdowns.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

import numpy as np

PROFILE_NAMES = ("conservative", "normal", "aggressive")

DT_DEFAULT = 0.05          # 20 Hz
K_V_DEFAULT = 0.5          # proportional speed-control gain, 1/s
LOOKAHEAD_M = 50.0
KAPPA_LIMIT = 0.1
OBSTACLE_STANDOFF_M = 2.0  # where the braking envelope reaches v_forced


class VehicleConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProfileParams:
    v_max: float
    a_max: float
    a_brake_max: float
    a_lat_max: float

    def validate(self) -> "ProfileParams":
        for name, value in vars(self).items():
            if value <= 0:
                raise VehicleConfigError(f"profile param {name} must be > 0, got {value}")
        return self


DEFAULT_PROFILES: dict[str, ProfileParams] = {
    "conservative": ProfileParams(12.0, 1.5, 2.5, 1.5),
    "normal": ProfileParams(20.0, 2.5, 4.0, 2.5),
    "aggressive": ProfileParams(30.0, 4.0, 6.0, 4.0),
}


def validate_profiles(profiles: dict[str, ProfileParams]) -> dict[str, ProfileParams]:
    for name in PROFILE_NAMES:
        if name not in profiles:
            raise VehicleConfigError(f"missing profile {name!r}")
        profiles[name].validate()
    for key in ("v_max", "a_max", "a_brake_max", "a_lat_max"):
        values = [getattr(profiles[name], key) for name in PROFILE_NAMES]
        if not values[0] <= values[1] <= values[2]:
            raise VehicleConfigError(
                f"profiles must be ordered conservative <= normal <= aggressive "
                f"componentwise; {key} is {values}")
    return profiles


@dataclass(frozen=True)
class Obstacle:
    at: float          # position within the segment, m
    v_forced: float    # imposed speed while active, m/s
    duration: float    # seconds the obstacle stays active once armed


@dataclass(frozen=True)
class RouteSegment:
    length: float
    kappa: float
    obstacle: Obstacle | None = None

    def validate(self) -> "RouteSegment":
        if self.length <= 0:
            raise VehicleConfigError(f"segment length must be > 0, got {self.length}")
        if abs(self.kappa) > KAPPA_LIMIT:
            raise VehicleConfigError(f"|kappa| must be <= {KAPPA_LIMIT}, got {self.kappa}")
        return self


class Route:
    def __init__(self, segments: list[RouteSegment]):
        if not segments:
            raise VehicleConfigError("route needs at least one segment")
        self.segments = [seg.validate() for seg in segments]
        self._starts = [0.0]
        for seg in self.segments:
            self._starts.append(self._starts[-1] + seg.length)
        self.total_length = self._starts[-1]
        self.obstacles = []
        for i, seg in enumerate(self.segments):
            if seg.obstacle is not None:
                self.obstacles.append({
                    "s": self._starts[i] + seg.obstacle.at,
                    "v_forced": seg.obstacle.v_forced,
                    "duration": seg.obstacle.duration,
                })

    def segment_index(self, s: float) -> int:
        idx = bisect.bisect_right(self._starts, s) - 1
        return min(max(idx, 0), len(self.segments) - 1)

    def kappa_at(self, s: float) -> float:
        if s >= self.total_length:
            return 0.0
        return self.segments[self.segment_index(s)].kappa

    def min_target_speed(self, params: ProfileParams, s: float, window: float) -> float:
        """Min of target_speed over [s, s+window] (straight past the end)."""
        end = min(s + window, self.total_length)
        v = params.v_max
        if s >= self.total_length:
            return v
        i = self.segment_index(s)
        while i < len(self.segments) and self._starts[i] < end:
            v = min(v, target_speed(params, self.segments[i].kappa))
            i += 1
        return v

    def mean_abs_kappa(self, s: float, dist: float = 100.0) -> float:
        """Average |kappa| over the next `dist` meters (0 beyond the end)."""
        if dist <= 0:
            return 0.0
        acc = 0.0
        pos = s
        end = s + dist
        while pos < min(end, self.total_length):
            i = self.segment_index(pos)
            seg_end = self._starts[i + 1]
            span = min(seg_end, end) - pos
            acc += abs(self.segments[i].kappa) * span
            pos += span
        return acc / dist


def target_speed(params: ProfileParams, kappa: float) -> float:
    """Profile speed cap intersected with the lateral-acceleration limit."""
    if kappa == 0.0:
        return params.v_max
    return min(params.v_max, math.sqrt(params.a_lat_max / abs(kappa)))


def make_route(seed: int, n_segments: int = 80,
               length_range: tuple[float, float] = (80.0, 200.0),
               kappa_range: tuple[float, float] = (0.0, 0.025),
               obstacle_rate: float = 0.05) -> Route:
    """Seeded random route; same seed gives an identical route."""
    if n_segments < 1:
        raise VehicleConfigError(f"n_segments must be >= 1, got {n_segments}")
    if not 0.0 <= obstacle_rate <= 1.0:
        raise VehicleConfigError(f"obstacle_rate must be in [0,1], got {obstacle_rate}")
    lo, hi = length_range
    if lo <= 0 or hi < lo:
        raise VehicleConfigError(f"bad length_range {length_range}")
    klo, khi = kappa_range
    if klo < 0 or khi < klo or khi > KAPPA_LIMIT:
        raise VehicleConfigError(f"bad kappa_range {kappa_range}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
    segments = []
    for _ in range(n_segments):
        length = float(rng.uniform(lo, hi))
        kappa = float(rng.uniform(klo, khi)) * (1.0 if rng.random() < 0.5 else -1.0)
        obstacle = None
        if rng.random() < obstacle_rate:
            obstacle = Obstacle(
                at=float(rng.uniform(0.2, 0.8) * length),
                v_forced=float(rng.uniform(0.0, 4.0)),
                duration=float(rng.uniform(2.0, 8.0)),
            )
        segments.append(RouteSegment(length=length, kappa=kappa, obstacle=obstacle))
    return Route(segments)


@dataclass(frozen=True)
class VehicleState:
    t: float
    s_pos: float
    v: float
    a_long: float
    a_lat: float
    jerk: float
    kappa: float
    profile: str


class VehicleSim:
    """Steps the plant at a fixed dt; profile changes apply at the next step."""

    def __init__(self, route: Route, profiles: dict[str, ProfileParams] | None = None,
                 profile: str = "normal", dt: float = DT_DEFAULT,
                 k_v: float = K_V_DEFAULT, lookahead: float = LOOKAHEAD_M):
        if dt <= 0:
            raise VehicleConfigError(f"dt must be > 0, got {dt}")
        self.route = route
        self.profiles = validate_profiles(dict(profiles or DEFAULT_PROFILES))
        if profile not in self.profiles:
            raise VehicleConfigError(f"unknown profile {profile!r}")
        self.dt = dt
        self.k_v = k_v
        self.lookahead = lookahead
        self.state = VehicleState(t=0.0, s_pos=0.0, v=0.0, a_long=0.0, a_lat=0.0,
                                  jerk=0.0, kappa=route.kappa_at(0.0), profile=profile)
        self._pending_profile: str | None = None
        self.transitions: list[tuple[float, str]] = [(0.0, profile)]
        self._obstacles = [dict(ob, engaged_at=None, expired=False)
                           for ob in route.obstacles]

    @property
    def exhausted(self) -> bool:
        return self.state.s_pos >= self.route.total_length

    def set_profile(self, name: str) -> None:
        if name not in self.profiles:
            raise VehicleConfigError(f"unknown profile {name!r}")
        self._pending_profile = name

    def _obstacle_cap(self, s: float, v: float, t: float, a_brake: float) -> float:
        """Speed cap from obstacles in the window: a braking-distance envelope
        tapering to v_forced at the standoff point, tightened by the
        proportional controller's tracking lag (a_dec / k_v) so the plant
        actually arrives at v_forced. The blocking clock starts when the
        vehicle reaches the obstacle."""
        cap = math.inf
        lag = a_brake / self.k_v
        # settled-but-short vehicles park anywhere the lag-tightened envelope
        # is at v_forced; engagement must cover that whole zone
        park_zone = OBSTACLE_STANDOFF_M + a_brake / (2.0 * self.k_v**2) + 1.0
        for ob in self._obstacles:
            if ob["expired"]:
                continue
            dist = ob["s"] - s
            if ob["engaged_at"] is None:
                if dist < -0.5:
                    ob["expired"] = True  # blew past faster than it could brake
                    continue
                if ((dist <= park_zone and v <= ob["v_forced"] + 0.3)
                        or (dist <= 0.0 and v <= ob["v_forced"] + 4.0)):
                    ob["engaged_at"] = t
            if ob["engaged_at"] is not None:
                if t - ob["engaged_at"] >= ob["duration"]:
                    ob["expired"] = True
                else:
                    cap = min(cap, ob["v_forced"])
                continue
            if dist > 2.0 * self.lookahead:
                continue  # obstacles are visible beyond the curvature window
            if dist - OBSTACLE_STANDOFF_M <= 1.3 * v / self.k_v:
                # inside the controller's exponential convergence distance
                cap = min(cap, ob["v_forced"])
            else:
                envelope = math.sqrt(
                    ob["v_forced"] ** 2
                    + 2.0 * a_brake * max(0.0, dist - OBSTACLE_STANDOFF_M))
                cap = min(cap, max(ob["v_forced"], envelope - lag))
        return cap

    def step(self) -> VehicleState:
        prev = self.state
        if self._pending_profile is not None:
            if self._pending_profile != prev.profile:
                self.transitions.append((prev.t, self._pending_profile))
                prev = VehicleState(**{**vars(prev), "profile": self._pending_profile})
            self._pending_profile = None
        params = self.profiles[prev.profile]
        v_tgt = self.route.min_target_speed(params, prev.s_pos, self.lookahead)
        v_tgt = min(v_tgt, self._obstacle_cap(prev.s_pos, prev.v, prev.t,
                                              params.a_brake_max))
        a_long = min(max(self.k_v * (v_tgt - prev.v), -params.a_brake_max), params.a_max)
        v = max(0.0, prev.v + a_long * self.dt)
        s_pos = prev.s_pos + v * self.dt
        t = prev.t + self.dt
        kappa = self.route.kappa_at(s_pos)
        self.state = VehicleState(
            t=t, s_pos=s_pos, v=v, a_long=a_long,
            a_lat=v * v * abs(kappa),
            jerk=(a_long - prev.a_long) / self.dt,
            kappa=kappa, profile=prev.profile,
        )
        return self.state
