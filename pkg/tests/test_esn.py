import numpy as np
import pytest
import scipy.sparse as sp

from teach import esn as esn_mod
from teach.esn import (
    DegenerateDataError,
    DegenerateReservoirError,
    EsnConfig,
    EsnModel,
    EsnState,
    EsnStream,
    ModelLoadError,
    SingularReadoutError,
    compute_norm_stats,
    esn_predict,
    esn_step,
    featurize,
    fit_readout,
    init_reservoir,
    initial_state,
    model_from_doc,
    model_to_doc,
    scale_to_radius,
    spectral_radius,
    train_esn,
)


def toy_model(n=8, seed=1, w_out=None, washout=0, norm_mean=(0.0, 0.0), norm_std=(1.0, 1.0),
              leak=0.2):
    config = EsnConfig(n_reservoir=n, washout=washout, seed=seed, leak=leak)
    w_in, w = init_reservoir(config)
    if w_out is None:
        w_out = np.zeros((1, 1 + 2 + n))
    return EsnModel(w_in=w_in, w=w, w_out=np.asarray(w_out, dtype=float),
                    norm_mean=np.array(norm_mean), norm_std=np.array(norm_std),
                    config=config)


def synthetic_episode(rng, samples=400):
    """Slow latent target + affine observable with small ripple."""
    target = 0.5 + 0.4 * np.sin(np.linspace(0, 6, samples)) * rng.uniform(0.5, 1.0)
    eda = 2.0 + 4.0 * target + 0.05 * rng.standard_normal(samples)
    return eda, target


# -- reservoir init ----------------------------------------------------------

def test_scale_diagonal_matrix_hand_value():
    w = sp.csr_matrix(np.diag([1.0, 2.0]))
    scaled = scale_to_radius(w, 0.9).toarray()
    assert np.allclose(scaled, np.diag([0.45, 0.9]), atol=1e-12)


def test_nilpotent_spectral_radius_zero_raises():
    w = sp.csr_matrix(np.array([[0.0, 2.0], [0.0, 0.0]]))
    assert spectral_radius(w) == 0.0
    with pytest.raises(DegenerateReservoirError):
        scale_to_radius(w, 0.9)


def test_degenerate_draw_triggers_redraw(monkeypatch):
    config = EsnConfig(n_reservoir=2, density=1.0, seed=0)
    real_draw = esn_mod._draw
    calls = []

    def fake_draw(cfg, attempt):
        calls.append(attempt)
        if attempt == 0:
            return np.zeros((2, 3)), sp.csr_matrix(np.array([[0.0, 2.0], [0.0, 0.0]]))
        return real_draw(cfg, attempt)

    monkeypatch.setattr(esn_mod, "_draw", fake_draw)
    w_in, w = init_reservoir(config)
    assert calls == [0, 1]
    assert abs(spectral_radius(w) - 0.9) < 1e-9


def test_all_attempts_degenerate_raises(monkeypatch):
    nil = sp.csr_matrix(np.array([[0.0, 2.0], [0.0, 0.0]]))
    monkeypatch.setattr(esn_mod, "_draw", lambda cfg, attempt: (np.zeros((2, 3)), nil.copy()))
    with pytest.raises(DegenerateReservoirError):
        init_reservoir(EsnConfig(n_reservoir=2, seed=0))


def test_init_reservoir_deterministic_per_seed():
    a_in, a_w = init_reservoir(EsnConfig(seed=5))
    b_in, b_w = init_reservoir(EsnConfig(seed=5))
    assert np.array_equal(a_in, b_in)
    assert (a_w != b_w).nnz == 0
    c_in, _ = init_reservoir(EsnConfig(seed=6))
    assert not np.array_equal(a_in, c_in)


def test_spectral_radius_scaled_within_tolerance():
    for seed in range(5):
        _, w = init_reservoir(EsnConfig(seed=seed))
        dense_oracle = float(np.max(np.abs(np.linalg.eigvals(w.toarray()))))
        assert abs(dense_oracle - 0.9) < 1e-6


def test_spectral_radius_arpack_path_matches_dense():
    rng = np.random.default_rng(0)
    n = 600  # above the dense cutoff
    w = sp.random(n, n, density=0.02, random_state=rng, data_rvs=lambda k: rng.uniform(-1, 1, k))
    dense_oracle = float(np.max(np.abs(np.linalg.eigvals(w.toarray()))))
    assert abs(spectral_radius(w.tocsr()) - dense_oracle) < 1e-8 * max(1.0, dense_oracle)


def test_config_validation():
    with pytest.raises(Exception):
        EsnConfig(spectral_radius=1.2).validate()
    with pytest.raises(Exception):
        EsnConfig(leak=0.0).validate()
    with pytest.raises(Exception):
        EsnConfig(n_reservoir=0).validate()


# -- featurize ----------------------------------------------------------------

def test_featurize_centering_and_unit_scale():
    model = toy_model(norm_mean=(3.0, 0.1), norm_std=(0.5, 0.2))
    u = featurize(model, eda=3.0, prev_eda=2.9)  # delta = 0.1 = mean
    assert np.allclose(u, [0.0, 0.0])
    u = featurize(model, eda=3.5, prev_eda=3.4)
    assert u[0] == pytest.approx(1.0)


def test_constant_training_eda_rejected():
    with pytest.raises(DegenerateDataError):
        compute_norm_stats([np.full(100, 2.0)])


# -- step/predict ---------------------------------------------------------------

def test_step_no_leak_keeps_state():
    model = toy_model(leak=1e-12)  # leak ~ 0: x' ~ x
    state = EsnState(x=np.full(8, 0.3), samples_seen=0)
    out = esn_step(model, state, np.array([1.0, -1.0]))
    assert np.allclose(out.x, state.x, atol=1e-11)
    assert out.samples_seen == 1


def test_step_zero_everything_fixed_point():
    model = toy_model()
    model.w_in[:] = 0.0
    model.w.data[:] = 0.0
    state = initial_state(model)
    out = esn_step(model, state, np.zeros(2))
    assert np.all(out.x == 0.0)


def test_step_rejects_non_finite_input():
    model = toy_model()
    state = EsnState(x=np.full(8, 0.2), samples_seen=3)
    out = esn_step(model, state, np.array([np.nan, 0.0]))
    assert np.array_equal(out.x, state.x)
    assert out.samples_seen == 3
    assert out.faults == 1


def test_state_bounded_by_tanh_range():
    model = toy_model(n=30, seed=2)
    state = initial_state(model)
    rng = np.random.default_rng(0)
    for _ in range(500):
        state = esn_step(model, state, rng.normal(scale=3.0, size=2))
        assert np.all(np.abs(state.x) <= 1.0)


def test_predict_zero_readout_and_clipping():
    model = toy_model()
    state = EsnState(x=np.zeros(8), samples_seen=10)
    u = np.zeros(2)
    assert esn_predict(model, state, u) == 0.0
    model.w_out[0, 0] = -0.2  # bias only -> raw -0.2
    assert esn_predict(model, state, u) == 0.0
    model.w_out[0, 0] = 1.3
    assert esn_predict(model, state, u) == 1.0
    model.w_out[0, 0] = 0.42
    assert esn_predict(model, state, u) == pytest.approx(0.42)


def test_predict_warming_returns_none():
    model = toy_model(washout=5)
    state = EsnState(x=np.zeros(8), samples_seen=4)
    assert esn_predict(model, state, np.zeros(2)) is None


# -- readout fit ---------------------------------------------------------------

def test_fit_readout_scalar_hand_value():
    w = fit_readout(np.array([[1.0]]), np.array([[2.0]]), lam=1.0)
    assert w == pytest.approx(np.array([[1.0]]))


def test_fit_readout_huge_ridge_shrinks_to_zero():
    rng = np.random.default_rng(0)
    s = rng.normal(size=(5, 50))
    y = rng.normal(size=(1, 50))
    w = fit_readout(s, y, lam=1e12)
    assert np.linalg.norm(w) < 1e-9


def test_fit_readout_matches_dense_normal_equations_oracle():
    # independent oracle: explicit inverse of the regularized Gram matrix
    rng = np.random.default_rng(42)
    model = toy_model(n=20, seed=3, norm_mean=(2.0, 0.0), norm_std=(1.0, 0.05))
    eda = 2.0 + np.cumsum(rng.normal(scale=0.05, size=201))
    design = esn_mod._episode_design(model, eda)
    y = rng.normal(size=(1, design.shape[1]))
    lam = 1e-4
    oracle = y @ design.T @ np.linalg.inv(design @ design.T + lam * np.eye(design.shape[0]))
    fitted = fit_readout(design, y, lam)
    rel = np.max(np.abs(fitted - oracle)) / np.max(np.abs(oracle))
    assert rel <= 1e-8


def test_fit_readout_singular_advises_ridge():
    s = np.zeros((3, 10))
    y = np.ones((1, 10))
    with pytest.raises(SingularReadoutError, match="lambda > 0"):
        fit_readout(s, y, lam=0.0)


# -- dynamics properties ---------------------------------------------------------

def test_fading_memory_states_converge():
    model = toy_model(n=50, seed=4)
    rng = np.random.default_rng(1)
    a = EsnState(x=rng.uniform(-1, 1, 50))
    b = EsnState(x=rng.uniform(-1, 1, 50))
    for _ in range(400):
        u = rng.normal(size=2)
        a = esn_step(model, a, u)
        b = esn_step(model, b, u)
    assert np.linalg.norm(a.x - b.x) < 1e-6


def test_streaming_equals_batch_exactly():
    rng = np.random.default_rng(7)
    eda, target = synthetic_episode(rng)
    config = EsnConfig(n_reservoir=40, washout=10, seed=9)
    model, _ = train_esn([(eda, target)], [], config)
    batch = esn_mod.predict_series(model, eda)
    # streaming: step/predict per sample (no smoothing)
    state = initial_state(model)
    prev = eda[0]
    preds = []
    for value in eda[1:]:
        u = featurize(model, value, prev)
        prev = value
        state = esn_step(model, state, u)
        raw = esn_predict(model, state, u)
        if raw is not None:
            preds.append(raw)
    # first prediction at samples_seen == washout, i.e. batch column washout-1
    assert np.isnan(batch[:config.washout - 1]).all()
    assert np.array_equal(np.array(preds), batch[config.washout - 1:])


def test_train_deterministic_same_doc():
    rng = np.random.default_rng(3)
    eda, target = synthetic_episode(rng)
    config = EsnConfig(n_reservoir=30, washout=10, seed=2)
    doc_a = model_to_doc(train_esn([(eda, target)], [], config)[0])
    doc_b = model_to_doc(train_esn([(eda, target)], [], config)[0])
    assert doc_a == doc_b


def test_train_validation_correlation_high_on_affine_task():
    rng = np.random.default_rng(5)
    train_eps = [synthetic_episode(rng) for _ in range(4)]
    valid_eps = [synthetic_episode(rng) for _ in range(2)]
    model, report = train_esn(train_eps, valid_eps, EsnConfig(n_reservoir=50, washout=20, seed=1))
    assert report.valid_corr is not None and report.valid_corr > 0.95


# -- artifact round-trip -----------------------------------------------------------

def test_model_doc_round_trip_equal_weights():
    rng = np.random.default_rng(11)
    eda, target = synthetic_episode(rng)
    model, _ = train_esn([(eda, target)], [], EsnConfig(n_reservoir=25, washout=10, seed=8))
    doc = model_to_doc(model)
    loaded = model_from_doc(doc)
    assert np.array_equal(loaded.w_in, model.w_in)
    assert np.array_equal(loaded.w_out, model.w_out)
    assert (loaded.w != model.w).nnz == 0
    assert np.array_equal(loaded.norm_mean, model.norm_mean)
    assert loaded.config == model.config


def test_model_doc_rejects_zero_std():
    model = toy_model()
    doc = model_to_doc(model)
    doc["norm"]["std"] = [0.0, 1.0]
    with pytest.raises(ModelLoadError, match="std"):
        model_from_doc(doc)


def test_model_doc_rejects_radius_drift():
    model = toy_model()
    doc = model_to_doc(model)
    doc["weights"]["w"]["triplets"] = [
        [i, j, v * 1.01] for i, j, v in doc["weights"]["w"]["triplets"]]
    with pytest.raises(ModelLoadError, match="radius"):
        model_from_doc(doc)


def test_model_doc_rejects_unknown_version():
    doc = model_to_doc(toy_model())
    doc["version"] = 99
    with pytest.raises(ModelLoadError, match="version"):
        model_from_doc(doc)


# -- smoothing ------------------------------------------------------------------

def test_stream_ema_half_life():
    model = toy_model(washout=0, w_out=None)
    stream = EsnStream(model, half_life_s=2.0, sample_hz=4.0)
    assert stream._decay == pytest.approx(0.5 ** (1.0 / 8.0))


def test_stream_warms_up_then_emits():
    rng = np.random.default_rng(2)
    eda, target = synthetic_episode(rng, samples=200)
    model, _ = train_esn([(eda, target)], [], EsnConfig(n_reservoir=20, washout=15, seed=3))
    stream = EsnStream(model)
    outputs = [stream.consume(float(v)) for v in eda]
    # sample 0 seeds differencing; predictions start once samples_seen
    # reaches the washout (15th reservoir step here)
    assert all(o is None for o in outputs[:15])
    assert all(o is not None and 0.0 <= o <= 1.0 for o in outputs[15:])
