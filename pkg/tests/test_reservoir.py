import numpy as np
import pytest
import scipy.linalg

from usecase.reservoir_usecase import (
    FeatureSpec,
    ReadoutModel,
    RunMetrics,
    build_reservoir,
    capped_metrics,
    closed_loop_trace,
    drive,
    ensemble_benchmark,
    nmse,
    predict_closed_loop,
    prepare_sequence,
    summarize,
    train_readout,
)
from utils.config import ExperimentConfig
from utils.constants import Constants
from utils.exceptions import DegenerateInputError, ParameterError

col = Constants.Columns


# ==========================================
# Construction
# ==========================================

def test_spectral_radius_is_normalised():
    for seed in range(20):
        res = build_reservoir(50, 1.1, 0.8, 0.2, seed)
        radius = np.max(np.abs(scipy.linalg.eigvals(res.W)))
        assert radius == pytest.approx(1.0, abs=1e-6)


def test_single_node_weight_is_unit():
    res = build_reservoir(1, 1.1, 0.8, 0.2, seed=4)
    assert abs(res.W[0, 0]) == pytest.approx(1.0, abs=1e-12)


def test_construction_is_seed_deterministic():
    a = build_reservoir(40, 1.1, 0.8, 0.2, seed=9)
    b = build_reservoir(40, 1.1, 0.8, 0.2, seed=9)
    assert np.array_equal(a.W, b.W)
    assert np.array_equal(a.W_in, b.W_in)
    assert np.array_equal(a.W_off, b.W_off)


def test_weights_are_zero_centred_and_dense():
    res = build_reservoir(200, 1.1, 0.8, 0.2, seed=1)
    assert np.count_nonzero(res.W) == 200 * 200
    assert abs(res.W_in.mean()) < 0.15
    assert np.all(np.abs(res.W_in) <= 1.0)


def test_build_rejects_empty_network():
    with pytest.raises(ParameterError):
        build_reservoir(0, 1.1, 0.8, 0.2, seed=0)


# ==========================================
# Driving
# ==========================================

def test_zero_input_without_bias_stays_at_rest():
    res = build_reservoir(20, 1.1, 0.8, 0.0, seed=2)
    driven = drive(res, np.zeros(50))
    assert np.array_equal(driven.states, np.zeros((50, 20)))


def test_states_are_bounded(small_reservoir, mg_series):
    driven = drive(small_reservoir, 10 * mg_series.values)
    assert np.max(np.abs(driven.states)) < 1.0


def test_washout_drops_leading_states(mg_series):
    res = build_reservoir(20, 1.1, 0.8, 0.2, seed=5)
    driven = drive(res, mg_series.values[:1500], washout=500)
    assert driven.rows == 1000
    assert driven.washout == 500
    full = drive(res, mg_series.values[:1500])
    assert np.array_equal(driven.states, full.states[500:])
    assert np.array_equal(driven.final_state, full.states[-1])


def test_drive_is_bit_identical(small_reservoir, mg_series):
    a = drive(small_reservoir, mg_series.values[:300])
    b = drive(small_reservoir, mg_series.values[:300])
    assert np.array_equal(a.states, b.states)


def test_drive_rejects_full_washout(small_reservoir):
    with pytest.raises(ParameterError):
        drive(small_reservoir, np.zeros(10), washout=10)


# ==========================================
# Readout
# ==========================================

def test_exact_linear_teacher_is_fitted(rng):
    X = rng.standard_normal((200, 10))
    teacher = X @ rng.standard_normal(10)
    model = train_readout(X, teacher)
    assert model.train_nmse < 1e-10


def test_orthogonal_teacher_gives_zero_weights(rng):
    X = np.column_stack([np.ones(100), rng.standard_normal((100, 5))])
    y = rng.standard_normal(100)
    q, _ = np.linalg.qr(X)
    y = y - q @ (q.T @ y)
    model = train_readout(X, y)
    assert np.allclose(model.W_out, 0.0, atol=1e-10)
    assert model.train_nmse == pytest.approx(1.0, abs=1e-10)


def test_residual_is_orthogonal_to_features(small_reservoir, mg_series):
    split = prepare_sequence(mg_series.values, 800, 10)
    driven = drive(small_reservoir, split.train_input, washout=200)
    teacher = split.teacher[200:]
    model = train_readout(driven, teacher)
    residual = teacher - driven.states @ model.W_out
    inner = driven.states.T @ residual
    bound = 1e-8 * np.linalg.norm(driven.states, axis=0) * np.linalg.norm(residual)
    assert np.all(np.abs(inner) <= bound + 1e-12)


def test_mask_feature_spec_trains_selected_columns(rng):
    X = rng.standard_normal((50, 6))
    model = train_readout(X, X[:, 2] + X[:, 4], FeatureSpec.mask([2, 4]))
    assert model.W_out == pytest.approx([1.0, 1.0])
    assert model.feature_spec.feature_count(6) == 2


def test_rank_deficient_training_still_returns(rng):
    X = rng.standard_normal((5, 10))
    model = train_readout(X, rng.standard_normal(5))
    assert model.W_out.shape == (10,)


def test_train_readout_rejects_misaligned_teacher(rng):
    with pytest.raises(ParameterError):
        train_readout(rng.standard_normal((10, 3)), np.zeros(9))


# ==========================================
# Closed loop
# ==========================================

def test_constant_signal_is_held():
    res = build_reservoir(30, 0.5, 0.8, 0.2, seed=8)
    c = 0.3
    driven = drive(res, np.full(400, c), washout=100)
    model = train_readout(driven, np.full(300, c))
    forecast = predict_closed_loop(res, model, driven.final_state, c, 300)
    assert len(forecast) == 300
    assert np.max(np.abs(forecast.values - c)) < 0.01 * c
    assert forecast.metadata["divergent"] is False


def test_horizon_one_is_single_readout(small_reservoir, mg_series):
    split = prepare_sequence(mg_series.values, 500, 1)
    driven = drive(small_reservoir, split.train_input, washout=100)
    model = train_readout(driven, split.teacher[100:])
    outputs, states, divergent = closed_loop_trace(small_reservoir, model, driven.final_state, split.y_start, 1)
    assert outputs.shape == (1,)
    assert not divergent
    assert outputs[0] == pytest.approx(float(states[0] @ model.W_out))


def test_horizon_zero_is_rejected(small_reservoir, rng):
    model = train_readout(rng.standard_normal((40, 30)), rng.standard_normal(40))
    with pytest.raises(ParameterError):
        predict_closed_loop(small_reservoir, model, np.zeros(30), 0.0, 0)


def test_first_closed_loop_state_matches_teacher_forcing(small_reservoir, mg_series):
    split = prepare_sequence(mg_series.values, 600, 20)
    driven = drive(small_reservoir, split.train_input, washout=100)
    model = train_readout(driven, split.teacher[100:])
    outputs, states, _ = closed_loop_trace(small_reservoir, model, driven.final_state, split.y_start, 20)
    forced = drive(small_reservoir, [split.y_start, outputs[0]], x0=driven.final_state)
    assert np.allclose(states[0], forced.states[0], atol=1e-14)
    assert np.allclose(states[1], forced.states[1], atol=1e-14)


def test_non_finite_readout_is_flagged_divergent(small_reservoir):
    model = ReadoutModel(np.full(30, np.inf), FeatureSpec(), float("nan"))
    outputs, _, divergent = closed_loop_trace(small_reservoir, model, np.full(30, 0.5), 1.0, 50)
    assert divergent
    assert outputs.shape[0] < 50


# ==========================================
# Metrics
# ==========================================

def test_nmse_basics(rng):
    t = rng.standard_normal(100)
    assert nmse(t, t) == 0.0
    assert nmse(np.full(100, t.mean()), t) == pytest.approx(1.0)


def test_nmse_stdev_mode(rng):
    t = 2.0 * rng.standard_normal(100)
    p = t + 0.1
    assert nmse(p, t, "stdev") == pytest.approx(0.01 / np.std(t))


def test_nmse_is_not_shift_invariant_in_general(rng):
    t = rng.standard_normal(50)
    p = t + 0.2
    assert nmse(p + 1.0, t) != nmse(p, t)


def test_nmse_rejects_constant_target():
    with pytest.raises(DegenerateInputError):
        nmse(np.zeros(5), np.ones(5))


def test_nmse_rejects_unequal_lengths():
    with pytest.raises(ParameterError):
        nmse(np.zeros(4), np.arange(5.0))


def test_capped_metrics_flags_truncation():
    metrics = capped_metrics(np.zeros(3), np.arange(10.0), True, 0.01, 5)
    assert metrics.nmse == Constants.Defaults.NMSE_CAP
    assert metrics.divergent and metrics.blown_up


def test_capped_metrics_single_sample_uses_reference_variance():
    metrics = capped_metrics(np.array([0.5]), np.array([0.0]), False, 0.01, 5, reference_var=0.25)
    assert metrics.nmse == pytest.approx(1.0)
    assert not metrics.divergent


def test_summarize_reports_divergence_percentage():
    metrics = [RunMetrics(0.1, False, False, 0.0, 10), RunMetrics(3.0, True, False, 0.0, 10)]
    summary = summarize(metrics)
    assert summary[col.MEAN_NMSE] == pytest.approx(1.55)
    assert summary[col.DIVERGENCE_PCT] == 50.0
    assert summary[col.BLOWN_UP] == 0


# ==========================================
# Sequences and ensembles
# ==========================================

def test_prepare_sequence_alignment():
    split = prepare_sequence(np.arange(20.0), 10, 4)
    assert np.array_equal(split.teacher[:-1], split.train_input[1:])
    assert split.y_start == split.teacher[-1]
    assert split.target.shape == (4,)
    assert split.mean == pytest.approx(5.0)
    assert split.target[0] == pytest.approx(11.0 - 5.0)


def test_prepare_sequence_too_short():
    with pytest.raises(ParameterError):
        prepare_sequence(np.arange(10.0), 8, 4)


def test_ensemble_is_independent_of_worker_count(tiny_config_data):
    data = {**tiny_config_data, "ensemble_networks": 2, "ensemble_sequences": 2}
    serial, _ = ensemble_benchmark(ExperimentConfig.from_dict({**data, "workers": 1}))
    parallel, _ = ensemble_benchmark(ExperimentConfig.from_dict({**data, "workers": 3}))
    assert [r.pair.run_id for r in serial] == [0, 1, 2, 3]
    assert [r.metrics.nmse for r in serial] == [r.metrics.nmse for r in parallel]


def test_ensemble_progress_is_reported(tiny_config_data):
    calls = []
    ensemble_benchmark(ExperimentConfig.from_dict(tiny_config_data), lambda done, total: calls.append((done, total)))
    assert calls == [(1, 1)]


@pytest.mark.slow
def test_mackey_glass_benchmark_accuracy():
    config = ExperimentConfig.for_experiment("predict")
    _, summary = ensemble_benchmark(config)
    assert summary[col.MEAN_NMSE] <= 0.3
    assert summary[col.DIVERGENCE_PCT] < 20
