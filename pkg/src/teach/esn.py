"""Echo-state stress detector.

Fixed random reservoir (leaky tanh units, spectral-radius-scaled sparse
recurrence), ridge-regression readout trained offline, streamed at inference
with an exponential-moving-average smoother before publication. Inputs are
normalized EDA level and first difference; the output is a stress estimate
clipped to [0, 1].
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import _kernels

N_INPUTS = 2
EDA_RATE_HZ = 4.0


class EsnError(Exception):
    pass


class DegenerateReservoirError(EsnError):
    """All redraw attempts produced a zero-spectral-radius reservoir."""


class DegenerateDataError(EsnError):
    """Training data has a zero-variance feature."""


class SingularReadoutError(EsnError):
    """Normal equations singular; ridge lambda must be positive."""


class ModelLoadError(EsnError):
    pass


@dataclass(frozen=True)
class EsnConfig:
    n_reservoir: int = 100
    spectral_radius: float = 0.9
    leak: float = 0.2
    input_scaling: float = 0.5
    density: float = 0.1
    ridge: float = 1e-4
    washout: int = 80
    seed: int = 0

    def validate(self) -> "EsnConfig":
        if self.n_reservoir < 1:
            raise EsnError(f"n_reservoir must be >= 1, got {self.n_reservoir}")
        if not 0.0 < self.spectral_radius < 1.0:
            raise EsnError(f"spectral_radius must be in (0,1), got {self.spectral_radius}")
        if not 0.0 < self.leak <= 1.0:
            raise EsnError(f"leak must be in (0,1], got {self.leak}")
        if not 0.0 < self.density <= 1.0:
            raise EsnError(f"density must be in (0,1], got {self.density}")
        if self.ridge < 0.0:
            raise EsnError(f"ridge must be >= 0, got {self.ridge}")
        if self.washout < 0:
            raise EsnError(f"washout must be >= 0, got {self.washout}")
        return self


def spectral_radius(w) -> float:
    """Largest |eigenvalue| of a (sparse) square matrix.

    Dense eigendecomposition for modest sizes; iterative Arnoldi (ARPACK,
    deterministic start vector) above, falling back to dense on
    non-convergence. Plain norm-ratio power iteration is not used because it
    never settles when the dominant eigenvalues are a complex pair, which is
    the common case for random reservoir draws.
    """
    n = w.shape[0]
    dense = w.toarray() if sp.issparse(w) else np.asarray(w)
    if n <= 512:
        return float(np.max(np.abs(np.linalg.eigvals(dense))))
    try:
        # k > 1 so a dominant complex-conjugate pair fits in the subspace
        v0 = np.random.default_rng(0).standard_normal(n)
        vals = sp.linalg.eigs(w, k=min(6, n - 2), which="LM", v0=v0, tol=1e-10,
                              maxiter=50 * n, return_eigenvectors=False)
        return float(np.max(np.abs(vals)))
    except Exception:
        return float(np.max(np.abs(np.linalg.eigvals(dense))))


def scale_to_radius(w: sp.csr_matrix, rho: float) -> sp.csr_matrix:
    """Rescale so the spectral radius equals rho; zero radius is degenerate."""
    est = spectral_radius(w)
    if est <= 1e-12:
        raise DegenerateReservoirError("reservoir draw has zero spectral radius")
    return (w * (rho / est)).tocsr()


def _draw(config: EsnConfig, attempt: int):
    rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed,
                                                       spawn_key=(attempt,)))
    n = config.n_reservoir
    w_in = rng.uniform(-config.input_scaling, config.input_scaling, size=(n, 1 + N_INPUTS))
    mask = rng.random((n, n)) < config.density
    values = rng.uniform(-1.0, 1.0, size=(n, n))
    w = sp.csr_matrix(np.where(mask, values, 0.0))
    return w_in, w


def init_reservoir(config: EsnConfig, max_attempts: int = 10):
    """Draw (W_in, W) for the config; deterministic per seed.

    A degenerate draw (zero spectral radius, e.g. nilpotent) moves to the
    next seed stream, up to max_attempts.
    """
    config.validate()
    last_error: Exception | None = None
    for attempt in range(max_attempts):
        w_in, w = _draw(config, attempt)
        try:
            w = scale_to_radius(w, config.spectral_radius)
        except DegenerateReservoirError as exc:
            last_error = exc
            continue
        return w_in, w
    raise DegenerateReservoirError(
        f"no usable reservoir in {max_attempts} attempts: {last_error}")


@dataclass
class EsnModel:
    w_in: np.ndarray            # (n, 1 + N_INPUTS)
    w: sp.csr_matrix            # (n, n)
    w_out: np.ndarray           # (1, 1 + N_INPUTS + n)
    norm_mean: np.ndarray       # (N_INPUTS,) over (eda, delta-eda)
    norm_std: np.ndarray        # (N_INPUTS,)
    config: EsnConfig

    @property
    def n_reservoir(self) -> int:
        return self.config.n_reservoir


@dataclass(frozen=True)
class EsnState:
    x: np.ndarray
    samples_seen: int = 0
    faults: int = 0


def initial_state(model: EsnModel) -> EsnState:
    return EsnState(x=np.zeros(model.n_reservoir), samples_seen=0, faults=0)


def featurize(model: EsnModel, eda: float, prev_eda: float) -> np.ndarray:
    """Normalized [level, first difference] input vector."""
    return np.array([
        (eda - model.norm_mean[0]) / model.norm_std[0],
        ((eda - prev_eda) - model.norm_mean[1]) / model.norm_std[1],
    ])


def esn_step(model: EsnModel, state: EsnState, u: np.ndarray) -> EsnState:
    """Leaky update; non-finite input is rejected (state unchanged, fault counted)."""
    if not np.all(np.isfinite(u)):
        return replace(state, faults=state.faults + 1)
    x = _kernels.esn_step(model.w_in, model.w, model.config.leak, state.x, u)
    return EsnState(x=x, samples_seen=state.samples_seen + 1, faults=state.faults)


def esn_predict(model: EsnModel, state: EsnState, u: np.ndarray) -> float | None:
    """Readout on [1; u; x], clipped to [0,1]; None while still warming up."""
    if state.samples_seen < model.config.washout:
        return None
    z = np.concatenate(([1.0], u, state.x))
    return float(np.clip(model.w_out @ z, 0.0, 1.0)[0])


def fit_readout(s: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """Ridge solve W_out = Y S^T (S S^T + lam I)^-1 for S (d, T), Y (1, T)."""
    s = np.asarray(s, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[None, :]
    d = s.shape[0]
    a = s @ s.T + lam * np.eye(d)
    g = y @ s.T
    try:
        w_out = np.linalg.solve(a, g.T).T
    except np.linalg.LinAlgError as exc:
        raise SingularReadoutError(
            "normal equations are singular; refit with ridge lambda > 0") from exc
    if not np.all(np.isfinite(w_out)):
        raise SingularReadoutError(
            "non-finite readout solution; refit with ridge lambda > 0")
    return w_out


def _episode_features(eda: np.ndarray, norm_mean: np.ndarray, norm_std: np.ndarray) -> np.ndarray:
    level = (eda[1:] - norm_mean[0]) / norm_std[0]
    delta = (np.diff(eda) - norm_mean[1]) / norm_std[1]
    return np.column_stack([level, delta])


def _episode_design(model: EsnModel, eda: np.ndarray) -> np.ndarray:
    u_seq = _episode_features(eda, model.norm_mean, model.norm_std)
    x0 = np.zeros(model.n_reservoir)
    states = _kernels.esn_harvest(model.w_in, model.w, model.config.leak, u_seq, x0)
    ones = np.ones((u_seq.shape[0], 1))
    return np.hstack([ones, u_seq, states]).T


def predict_series(model: EsnModel, eda: np.ndarray) -> np.ndarray:
    """Batch teacher-forced predictions for a whole EDA series (no smoothing).

    States come from the harvest kernel and the readout is applied per column
    exactly as in esn_predict, so this matches the streaming path bitwise.
    Returns one clipped prediction per reservoir step (length len(eda)-1);
    entries before the washout are NaN.
    """
    design = _episode_design(model, eda)
    out = np.full(design.shape[1], np.nan)
    for col in range(model.config.washout - 1, design.shape[1]):
        if col < 0:
            continue
        out[col] = float(np.clip(model.w_out @ design[:, col], 0.0, 1.0)[0])
    return out


@dataclass
class TrainReport:
    train_mse: float
    train_columns: int
    valid_corr: float | None
    valid_corr_per_episode: list = field(default_factory=list)
    backend: str = ""


def compute_norm_stats(episodes_eda: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    levels = np.concatenate([ep[1:] for ep in episodes_eda])
    deltas = np.concatenate([np.diff(ep) for ep in episodes_eda])
    mean = np.array([levels.mean(), deltas.mean()])
    std = np.array([levels.std(), deltas.std()])
    if np.any(std <= 0.0):
        raise DegenerateDataError(
            "training EDA has a zero-variance feature (constant input?)")
    return mean, std


def train_esn(train_episodes: list[tuple[np.ndarray, np.ndarray]],
              valid_episodes: list[tuple[np.ndarray, np.ndarray]],
              config: EsnConfig) -> tuple[EsnModel, TrainReport]:
    """Fit readout over harvested reservoir states; validate by streaming.

    Episodes are (eda, label) arrays on the EDA sample grid; labels are
    stress targets in [0,1]. Washout columns are excluded per episode.
    """
    config.validate()
    if not train_episodes:
        raise EsnError("no training episodes")
    for eda, label in train_episodes + valid_episodes:
        if len(eda) != len(label):
            raise EsnError("episode eda/label length mismatch")
        if len(eda) - 1 <= config.washout:
            raise EsnError(
                f"episode too short ({len(eda)} samples) for washout {config.washout}")
    norm_mean, norm_std = compute_norm_stats([ep[0] for ep in train_episodes])
    w_in, w = init_reservoir(config)
    model = EsnModel(w_in=w_in, w=w, w_out=np.zeros((1, 1 + N_INPUTS + config.n_reservoir)),
                     norm_mean=norm_mean, norm_std=norm_std, config=config)
    blocks = []
    targets = []
    for eda, label in train_episodes:
        design = _episode_design(model, eda)
        blocks.append(design[:, config.washout:])
        targets.append(label[1:][config.washout:])
    s = np.hstack(blocks)
    y = np.concatenate(targets)[None, :]
    model.w_out = fit_readout(s, y, config.ridge)
    residual = model.w_out @ s - y
    report = TrainReport(
        train_mse=float(np.mean(residual**2)),
        train_columns=int(s.shape[1]),
        valid_corr=None,
        backend=_kernels.backend_name(),
    )
    if valid_episodes:
        pooled_pred: list[np.ndarray] = []
        pooled_true: list[np.ndarray] = []
        for eda, label in valid_episodes:
            pred, true = _stream_episode(model, eda, label)
            pooled_pred.append(pred)
            pooled_true.append(true)
            if len(pred) >= 2 and pred.std() > 0 and true.std() > 0:
                report.valid_corr_per_episode.append(
                    float(np.corrcoef(pred, true)[0, 1]))
        pred = np.concatenate(pooled_pred)
        true = np.concatenate(pooled_true)
        report.valid_corr = float(np.corrcoef(pred, true)[0, 1])
    return model, report


def _stream_episode(model: EsnModel, eda: np.ndarray, label: np.ndarray):
    stream = EsnStream(model)
    preds = []
    trues = []
    for value, target in zip(eda, label):
        out = stream.consume(float(value))
        if out is not None:
            preds.append(out)
            trues.append(target)
    return np.array(preds), np.array(trues)


class EsnStream:
    """Streaming inference wrapper: differencing, warm-up, EMA smoothing.

    ``consume`` returns the smoothed stress estimate, or None while the
    reservoir is still washing out its initial state.
    """

    def __init__(self, model: EsnModel, half_life_s: float = 2.0,
                 sample_hz: float = EDA_RATE_HZ):
        self.model = model
        self.state = initial_state(model)
        self._prev_eda: float | None = None
        self._ema: float | None = None
        self._decay = 0.5 ** (1.0 / (half_life_s * sample_hz))

    @property
    def warmed_up(self) -> bool:
        return self.state.samples_seen >= self.model.config.washout

    def consume(self, eda: float) -> float | None:
        if self._prev_eda is None:
            self._prev_eda = eda
            return None
        u = featurize(self.model, eda, self._prev_eda)
        self._prev_eda = eda
        self.state = esn_step(self.model, self.state, u)
        raw = esn_predict(self.model, self.state, u)
        if raw is None:
            return None
        if self._ema is None:
            self._ema = raw
        else:
            self._ema = self._decay * self._ema + (1.0 - self._decay) * raw
        return self._ema


# -- artifact payload ------------------------------------------------------

def model_to_doc(model: EsnModel) -> dict:
    coo = model.w.tocoo()
    order = np.lexsort((coo.col, coo.row))
    triplets = [[int(coo.row[k]), int(coo.col[k]), float(coo.data[k])] for k in order]
    return {
        "kind": "esn",
        "version": 1,
        "config": asdict(model.config),
        "norm": {"mean": [float(v) for v in model.norm_mean],
                 "std": [float(v) for v in model.norm_std]},
        "weights": {
            "w_in": model.w_in.tolist(),
            "w": {"rows": model.w.shape[0], "cols": model.w.shape[1], "triplets": triplets},
            "w_out": model.w_out.tolist(),
        },
    }


def model_from_doc(doc: dict) -> EsnModel:
    if doc.get("kind") != "esn":
        raise ModelLoadError(f"not an esn artifact: kind={doc.get('kind')!r}")
    if doc.get("version") != 1:
        raise ModelLoadError(f"unsupported esn artifact version {doc.get('version')!r}")
    try:
        config = EsnConfig(**doc["config"]).validate()
        norm_mean = np.array(doc["norm"]["mean"], dtype=np.float64)
        norm_std = np.array(doc["norm"]["std"], dtype=np.float64)
        wdoc = doc["weights"]
        w_in = np.array(wdoc["w_in"], dtype=np.float64)
        rows = wdoc["w"]["rows"]
        cols = wdoc["w"]["cols"]
        triplets = wdoc["w"]["triplets"]
        i = [t[0] for t in triplets]
        j = [t[1] for t in triplets]
        v = [t[2] for t in triplets]
        w = sp.csr_matrix((v, (i, j)), shape=(rows, cols))
        w_out = np.array(wdoc["w_out"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelLoadError(f"malformed esn artifact: {exc}") from exc
    if norm_mean.shape != (N_INPUTS,) or norm_std.shape != (N_INPUTS,):
        raise ModelLoadError("norm stats have wrong shape")
    if np.any(norm_std <= 0.0):
        raise ModelLoadError("stored norm std must be > 0 per feature")
    if w_in.shape != (config.n_reservoir, 1 + N_INPUTS):
        raise ModelLoadError(f"w_in shape {w_in.shape} inconsistent with config")
    if w.shape != (config.n_reservoir, config.n_reservoir):
        raise ModelLoadError(f"w shape {w.shape} inconsistent with config")
    if w_out.shape != (1, 1 + N_INPUTS + config.n_reservoir):
        raise ModelLoadError(f"w_out shape {w_out.shape} inconsistent with config")
    est = spectral_radius(w)
    if abs(est - config.spectral_radius) > 1e-6:
        raise ModelLoadError(
            f"stored reservoir spectral radius {est:.9f} deviates from "
            f"configured {config.spectral_radius}")
    return EsnModel(w_in=w_in, w=w, w_out=w_out, norm_mean=norm_mean,
                    norm_std=norm_std, config=config)
