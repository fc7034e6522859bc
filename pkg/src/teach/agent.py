"""Actor-critic driving-style personalization.

Small tanh networks over epoch features (mean/slope of the published stress
estimate, normalized mean speed, curvature preview, bias). The critic learns
the discounted return of a stress-vs-progress reward; the actor follows the
one-step TD advantage with an entropy bonus. All gradients are analytic and
checked against central finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .vehicle import PROFILE_NAMES

FEATURE_DIM = 5
N_ACTIONS = len(PROFILE_NAMES)
V_NORM = 30.0          # speed normalizer (top profile speed cap)
KAPPA_PREVIEW_SCALE = 100.0
D_REF = 150.0          # epoch progress normalizer, m


class AgentError(Exception):
    pass


class ModelIntegrityError(AgentError):
    """Network parameters or activations went non-finite."""


@dataclass(frozen=True)
class AgentConfig:
    hidden: int = 16
    lr_pi: float = 1e-3
    lr_v: float = 5e-3
    gamma: float = 0.9
    entropy_weight: float = 0.01
    beta: float = 0.2
    epoch_s: float = 5.0
    init_scale: float = 0.1
    seed: int = 0

    def validate(self) -> "AgentConfig":
        if not 0.0 <= self.gamma < 1.0:
            raise AgentError(f"gamma must be in [0,1), got {self.gamma}")
        if self.hidden < 1:
            raise AgentError(f"hidden must be >= 1, got {self.hidden}")
        if self.epoch_s <= 0:
            raise AgentError(f"epoch_s must be > 0, got {self.epoch_s}")
        return self


@dataclass
class AgentParams:
    """Policy (FEATURE_DIM -> hidden tanh -> 3 logits) and value (-> 1) nets."""

    w1_pi: np.ndarray
    w2_pi: np.ndarray
    w1_v: np.ndarray
    w2_v: np.ndarray
    faults: int = 0

    def arrays(self) -> list[np.ndarray]:
        return [self.w1_pi, self.w2_pi, self.w1_v, self.w2_v]

    def copy(self) -> "AgentParams":
        return AgentParams(*(a.copy() for a in self.arrays()), faults=self.faults)


def init_params(config: AgentConfig) -> AgentParams:
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(23,)))
    scale = config.init_scale
    h = config.hidden
    return AgentParams(
        w1_pi=rng.uniform(-scale, scale, size=(h, FEATURE_DIM)),
        w2_pi=rng.uniform(-scale, scale, size=(N_ACTIONS, h)),
        w1_v=rng.uniform(-scale, scale, size=(h, FEATURE_DIM)),
        w2_v=rng.uniform(-scale, scale, size=(1, h)),
    )


# -- features and reward -----------------------------------------------------

@dataclass
class EpochSummary:
    """Aggregates one decision window of published stress and vehicle state."""

    t_start: float
    t_end: float
    stress: list[tuple[float, float]] = field(default_factory=list)  # (ts, value)
    speeds: list[float] = field(default_factory=list)
    distance_m: float = 0.0

    @property
    def stress_mean(self) -> float:
        if not self.stress:
            raise AgentError("epoch has no stress samples")
        return float(np.mean([v for _, v in self.stress]))


def build_features(epoch: EpochSummary, kappa_preview: float, epoch_s: float,
                   prev_phi: np.ndarray | None = None) -> tuple[np.ndarray, bool]:
    """Feature vector for the epoch; falls back to the previous features
    (stale flag set) when the stress window is empty."""
    if not epoch.stress:
        if prev_phi is None:
            raise AgentError("no stress samples and no previous features to carry")
        return prev_phi.copy(), True
    values = np.array([v for _, v in epoch.stress])
    times = np.array([ts for ts, _ in epoch.stress])
    mean = float(values.mean())
    if len(values) >= 2 and np.ptp(times) > 0:
        tc = times - times.mean()
        slope = float((tc @ (values - values.mean())) / (tc @ tc)) * epoch_s
    else:
        slope = 0.0
    v_mean = float(np.mean(epoch.speeds)) / V_NORM if epoch.speeds else 0.0
    phi = np.array([mean, slope, v_mean, kappa_preview * KAPPA_PREVIEW_SCALE, 1.0])
    return phi, False


def compute_reward(epoch: EpochSummary, beta: float, d_ref: float = D_REF) -> float:
    """r = -stress_mean + beta * distance/d_ref."""
    return -epoch.stress_mean + beta * (epoch.distance_m / d_ref)


# -- forward passes ----------------------------------------------------------

def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def policy_forward(params: AgentParams, phi: np.ndarray) -> np.ndarray:
    h = np.tanh(params.w1_pi @ phi)
    logits = params.w2_pi @ h
    if not np.all(np.isfinite(logits)):
        raise ModelIntegrityError("policy produced non-finite logits")
    return _softmax(logits)


def value_forward(params: AgentParams, phi: np.ndarray) -> float:
    h = np.tanh(params.w1_v @ phi)
    v = float((params.w2_v @ h)[0])
    if not np.isfinite(v):
        raise ModelIntegrityError("value net produced non-finite output")
    return v


def policy_logprob(params: AgentParams, phi: np.ndarray, action: int) -> float:
    probs = policy_forward(params, phi)
    return float(np.log(max(probs[action], 1e-300)))


def policy_entropy(params: AgentParams, phi: np.ndarray) -> float:
    probs = policy_forward(params, phi)
    safe = np.clip(probs, 1e-300, None)
    return float(-(probs * np.log(safe)).sum())


def sample_action(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Index i with probability probs[i]."""
    cdf = np.cumsum(probs)
    return int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right").clip(0, N_ACTIONS - 1))


def greedy_action(probs: np.ndarray) -> int:
    """Argmax; ties break to the lower index."""
    return int(np.argmax(probs))


def action_profile(index: int) -> str:
    return PROFILE_NAMES[index]


# -- gradients ---------------------------------------------------------------

def _policy_backprop(params: AgentParams, phi: np.ndarray,
                     dlogits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h = np.tanh(params.w1_pi @ phi)
    g_w2 = np.outer(dlogits, h)
    dh = params.w2_pi.T @ dlogits
    dz = dh * (1.0 - h * h)
    g_w1 = np.outer(dz, phi)
    return g_w1, g_w2


def grad_log_policy(params: AgentParams, phi: np.ndarray, action: int):
    """Gradients of log pi(action|phi) w.r.t. (w1_pi, w2_pi)."""
    probs = policy_forward(params, phi)
    dlogits = -probs
    dlogits[action] += 1.0
    return _policy_backprop(params, phi, dlogits)


def grad_entropy(params: AgentParams, phi: np.ndarray):
    """Gradients of the policy entropy w.r.t. (w1_pi, w2_pi)."""
    probs = policy_forward(params, phi)
    logp = np.log(np.clip(probs, 1e-300, None))
    entropy = float(-(probs * logp).sum())
    dlogits = -probs * (logp + entropy)
    return _policy_backprop(params, phi, dlogits)


def grad_value(params: AgentParams, phi: np.ndarray):
    """Gradients of V(phi) w.r.t. (w1_v, w2_v)."""
    h = np.tanh(params.w1_v @ phi)
    g_w2 = h[None, :]
    dz = params.w2_v[0] * (1.0 - h * h)
    g_w1 = np.outer(dz, phi)
    return g_w1, g_w2


# -- learning ----------------------------------------------------------------

@dataclass(frozen=True)
class Transition:
    phi: np.ndarray
    action: int
    reward: float
    phi_next: np.ndarray
    terminal: bool = False


def td_update(params: AgentParams, transition: Transition, config: AgentConfig) -> float:
    """One-step advantage update, in place; returns the TD error.

    A non-finite TD error or gradient skips the update and bumps the fault
    counter instead of corrupting the parameters.
    """
    v_now = value_forward(params, transition.phi)
    v_next = 0.0 if transition.terminal else value_forward(params, transition.phi_next)
    delta = transition.reward + config.gamma * v_next - v_now
    gv1, gv2 = grad_value(params, transition.phi)
    gp1, gp2 = grad_log_policy(params, transition.phi, transition.action)
    ge1, ge2 = grad_entropy(params, transition.phi)
    updates = [
        (params.w1_v, config.lr_v * delta * gv1),
        (params.w2_v, config.lr_v * delta * gv2),
        (params.w1_pi, config.lr_pi * (delta * gp1 + config.entropy_weight * ge1)),
        (params.w2_pi, config.lr_pi * (delta * gp2 + config.entropy_weight * ge2)),
    ]
    if not np.isfinite(delta) or not all(np.all(np.isfinite(du)) for _, du in updates):
        params.faults += 1
        return float(delta)
    for target, du in updates:
        target += du
    return float(delta)


# -- artifact payload ---------------------------------------------------------

def params_to_doc(params: AgentParams, config: AgentConfig) -> dict:
    return {
        "kind": "agent",
        "version": 1,
        "config": asdict(config),
        "policy": {"w1": params.w1_pi.tolist(), "w2": params.w2_pi.tolist()},
        "value": {"w1": params.w1_v.tolist(), "w2": params.w2_v.tolist()},
    }


def params_from_doc(doc: dict) -> tuple[AgentParams, AgentConfig]:
    if doc.get("kind") != "agent":
        raise AgentError(f"not an agent artifact: kind={doc.get('kind')!r}")
    if doc.get("version") != 1:
        raise AgentError(f"unsupported agent artifact version {doc.get('version')!r}")
    try:
        config = AgentConfig(**doc["config"]).validate()
        params = AgentParams(
            w1_pi=np.array(doc["policy"]["w1"], dtype=np.float64),
            w2_pi=np.array(doc["policy"]["w2"], dtype=np.float64),
            w1_v=np.array(doc["value"]["w1"], dtype=np.float64),
            w2_v=np.array(doc["value"]["w2"], dtype=np.float64),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise AgentError(f"malformed agent artifact: {exc}") from exc
    expected = [(config.hidden, FEATURE_DIM), (N_ACTIONS, config.hidden),
                (config.hidden, FEATURE_DIM), (1, config.hidden)]
    for arr, shape in zip(params.arrays(), expected):
        if arr.shape != shape:
            raise AgentError(f"array shape {arr.shape} does not match config {shape}")
        if not np.all(np.isfinite(arr)):
            raise ModelIntegrityError("non-finite parameters in agent artifact")
    return params, config
