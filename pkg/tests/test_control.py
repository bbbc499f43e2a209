import numpy as np
import pytest

from usecase.control_usecase import (
    ControllerSpec,
    PredictorSpec,
    SpikeDetector,
    SpikeTrain,
    detect_spikes,
    fhn_control,
    fit_return_map,
    node_sweep,
    run_controlled,
    train_predictor,
)
from usecase.embedding_usecase import acf, select_tau0
from usecase.signals_usecase import FHNParams, FHNState, fhn_equilibrium, gen_fhn
from utils.config import ExperimentConfig
from utils.constants import Constants
from utils.exceptions import NoFixedPointError, ParameterError

col = Constants.Columns


@pytest.fixture(scope="module")
def noisy_voltage():
    v, _ = gen_fhn(FHNParams(), 20000, FHNState(0.0, 0.0), seed=17)
    return v.values


@pytest.fixture
def control_config_data(tmp_path):
    return {
        "experiment": "fhn-control",
        "predictor": "oracle",
        "control_train_len": 20000,
        "control_run_len": 4000,
        "washout": 100,
        "out_dir": str(tmp_path / "results"),
    }


# ==========================================
# Spikes and return map
# ==========================================

def test_detect_spikes_enforces_refractory():
    v = np.zeros(100)
    v[[10, 13, 50, 90]] = 1.0
    train = detect_spikes(v, 0.5, 5)
    assert train.spike_indices.tolist() == [10, 50, 90]
    assert train.isi.tolist() == [40, 40]


def test_spacing_equal_to_refractory_is_dropped():
    v = np.zeros(40)
    v[[10, 15]] = 1.0
    assert detect_spikes(v, 0.5, 5).spike_indices.tolist() == [10]


def test_spike_train_rows():
    train = SpikeTrain.from_indices([10, 50, 90])
    assert train.rows() == [(10, 40), (50, 40), (90, None)]
    assert train.mean_isi() == 40.0


def test_empty_spike_train():
    train = detect_spikes(np.zeros(50), 0.5, 5)
    assert len(train) == 0
    assert np.isnan(train.mean_isi())


def test_online_detector_matches_offline(noisy_voltage):
    detector = SpikeDetector(0.6, 100, noisy_voltage[0])
    for k in range(1, noisy_voltage.shape[0]):
        detector.update(k, noisy_voltage[k])
    offline = detect_spikes(noisy_voltage, 0.6, 100)
    assert detector.train().spike_indices.tolist() == offline.spike_indices.tolist()
    assert len(offline) > 10


def test_return_map_recovers_fixed_point():
    isi = [150.0]
    for _ in range(14):
        isi.append(-0.5 * isi[-1] + 300.0)
    fixed, slope = fit_return_map(isi)
    assert fixed == pytest.approx(200.0)
    assert slope == pytest.approx(-0.5)


def test_return_map_needs_ten_intervals():
    with pytest.raises(ParameterError):
        fit_return_map([100.0] * 9)


def test_return_map_unit_slope_has_no_fixed_point():
    with pytest.raises(NoFixedPointError):
        fit_return_map(np.arange(100.0, 120.0))


def test_controller_spec_validation():
    with pytest.raises(ParameterError):
        ControllerSpec(refractory=150, target_isi=100.0)
    with pytest.raises(ParameterError):
        ControllerSpec(pulse_width=0)


@pytest.mark.parametrize("fraction", [0.0, -0.5, 1.5])
def test_pacing_fraction_must_lie_in_unit_interval(fraction):
    with pytest.raises(ParameterError):
        ControllerSpec(pacing_fraction=fraction)


# ==========================================
# Predictors
# ==========================================

def test_rrnn_predictor_forecasts_next_sample():
    n = np.arange(2001)
    v = np.sin(2 * np.pi * n / 50) + 0.3
    predictor = train_predictor(PredictorSpec("rrnn", m=30, mu=0.9, seed=2, washout=100), v[:2000])
    assert predictor.advance(v[1999]) == pytest.approx(v[2000], abs=0.05)


def test_trrnn_predictor_uses_delay_ring():
    n = np.arange(2001)
    v = np.sin(2 * np.pi * n / 50)
    predictor = train_predictor(PredictorSpec("trrnn", m=20, mu=0.9, seed=2, tau_T=-5, washout=100), v[:2000])
    assert predictor.model.W_out.shape == (40,)
    assert predictor.advance(v[1999]) == pytest.approx(v[2000], abs=0.05)


def test_unknown_predictor_kind():
    with pytest.raises(ParameterError):
        PredictorSpec("lstm")


# ==========================================
# Controlled runs
# ==========================================

def test_zero_amplitude_pacing_leaves_neuron_untouched():
    ctrl = ControllerSpec(refractory=100, target_isi=200.0, pulse_amplitude=0.0)
    report = run_controlled(FHNParams(), PredictorSpec("oracle"), ctrl, 2000, 6000, seed=3)
    assert report.controlled_isi.spike_indices.tolist() == report.uncontrolled_isi.spike_indices.tolist()
    assert report.normalized_mean_isi == pytest.approx(1.0)
    assert report.pulses > 0


def test_controlled_run_is_deterministic():
    ctrl = ControllerSpec(refractory=100, target_isi=250.0)
    a = run_controlled(FHNParams(), PredictorSpec("oracle"), ctrl, 2000, 5000, seed=4)
    b = run_controlled(FHNParams(), PredictorSpec("oracle"), ctrl, 2000, 5000, seed=4)
    assert a.controlled_isi.spike_indices.tolist() == b.controlled_isi.spike_indices.tolist()
    assert a.pulses == b.pulses
    assert a.nodes == 0 and a.architecture == "oracle"


def test_fitted_target_exceeds_refractory():
    report = run_controlled(FHNParams(), PredictorSpec("oracle"), ControllerSpec(), 20000, 3000, seed=5)
    assert report.target_isi > report.refractory
    assert report.return_map_slope is not None


def test_network_predictor_run_reports_nodes():
    ctrl = ControllerSpec(refractory=100, target_isi=250.0)
    predictor = PredictorSpec("rrnn", m=8, mu=0.9, seed=1, washout=100)
    report = run_controlled(FHNParams(), predictor, ctrl, 3000, 3000, seed=6, resync_every=100)
    assert report.nodes == 8
    assert report.architecture == "rrnn"
    assert set(report.to_dict()) >= {col.NODES, col.ISI_CV, col.STABILIZED, col.NORMALIZED_MEAN_ISI}


def test_run_controlled_rejects_bad_lengths():
    with pytest.raises(ParameterError):
        run_controlled(FHNParams(), PredictorSpec("oracle"), ControllerSpec(target_isi=200.0), 1, 10, seed=0)


# ==========================================
# Experiments
# ==========================================

def test_fhn_control_from_config(control_config_data):
    report = fhn_control(ExperimentConfig.from_dict(control_config_data))
    assert report.architecture == "oracle"
    assert len(report.uncontrolled_isi) > 0


def test_node_sweep_orders_grid(control_config_data):
    data = {**control_config_data, "experiment": "node-sweep", "node_grid": [6, 4],
            "architectures": ["rrnn"], "control_run_len": 2000, "target_isi": 250.0, "refractory": 100}
    calls = []
    result = node_sweep(ExperimentConfig.from_dict(data), lambda done, total: calls.append((done, total)))
    assert [row[col.NODES] for row in result.table()] == [4, 6]
    assert calls == [(1, 2), (2, 2)]
    assert result.first_stabilizing("trrnn") is None


def test_pacing_interval_must_exceed_refractory():
    ctrl = ControllerSpec(refractory=100, target_isi=110.0)
    with pytest.raises(ParameterError):
        run_controlled(FHNParams(), PredictorSpec("oracle"), ctrl, 2000, 1000, seed=0)


def test_default_start_is_rest_equilibrium():
    fhn = FHNParams()
    ctrl = ControllerSpec(refractory=100, target_isi=250.0)
    default = run_controlled(fhn, PredictorSpec("oracle"), ctrl, 2000, 3000, seed=8)
    at_rest = run_controlled(fhn, PredictorSpec("oracle"), ctrl, 2000, 3000, seed=8,
                             initial=fhn_equilibrium(fhn))
    assert default.controlled_isi.spike_indices.tolist() == at_rest.controlled_isi.spike_indices.tolist()
    assert default.uncontrolled_isi.spike_indices.tolist() == at_rest.uncontrolled_isi.spike_indices.tolist()


def test_normalized_isi_relates_controlled_and_uncontrolled_means(control_config_data):
    report = fhn_control(ExperimentConfig.from_dict({**control_config_data, "control_run_len": 6000}))
    assert np.isfinite(report.uncontrolled_mean_isi)
    assert report.normalized_mean_isi * report.uncontrolled_mean_isi == pytest.approx(report.controlled_mean_isi)
    assert report.controlled_mean_isi == pytest.approx(report.controlled_isi.mean_isi())
    assert report.uncontrolled_mean_isi == pytest.approx(report.uncontrolled_isi.mean_isi())


def test_node_sweep_is_independent_of_worker_count(control_config_data):
    data = {**control_config_data, "experiment": "node-sweep", "node_grid": [4, 6],
            "architectures": ["rrnn", "trrnn"], "control_run_len": 1500, "target_isi": 250.0,
            "refractory": 100, "control_tau_T": -20}
    serial = node_sweep(ExperimentConfig.from_dict({**data, "workers": 1}))
    parallel = node_sweep(ExperimentConfig.from_dict({**data, "workers": 2}))
    assert [(r.architecture, r.nodes) for r in parallel.reports] == [("rrnn", 4), ("rrnn", 6), ("trrnn", 4), ("trrnn", 6)]
    assert ([r.controlled_isi.spike_indices.tolist() for r in serial.reports]
            == [r.controlled_isi.spike_indices.tolist() for r in parallel.reports])
    assert [r.pulses for r in serial.reports] == [r.pulses for r in parallel.reports]


def test_node_sweep_reports_progress_from_the_pool(control_config_data):
    data = {**control_config_data, "experiment": "node-sweep", "node_grid": [4, 6], "architectures": ["rrnn"],
            "control_run_len": 1500, "target_isi": 250.0, "refractory": 100, "workers": 2}
    calls = []
    node_sweep(ExperimentConfig.from_dict(data), lambda done, total: calls.append((done, total)))
    assert calls == [(1, 2), (2, 2)]


# ==========================================
# Source-scale reproductions
# ==========================================

@pytest.mark.slow
def test_default_neuron_embedding_lag():
    fhn = FHNParams()
    v, _ = gen_fhn(fhn, 100000, fhn_equilibrium(fhn), seed=20190101)
    tau0 = select_tau0(acf(v, 400))
    assert -181 <= tau0 <= -151


@pytest.mark.slow
@pytest.mark.parametrize("seed", [1, 2, 3])
def test_oracle_control_stabilizes_and_never_worsens_regularity(seed):
    report = run_controlled(FHNParams(), PredictorSpec("oracle"), ControllerSpec(), 100000, 200000, seed=seed)
    assert report.stabilized
    assert report.isi_cv < 0.05
    assert report.isi_cv <= report.uncontrolled_isi_cv


@pytest.mark.slow
def test_small_trrnn_stabilizes_where_equal_rrnn_fails():
    config = ExperimentConfig.from_dict({"experiment": "node-sweep", "node_grid": [12],
                                         "architectures": ["rrnn", "trrnn"], "control_run_len": 200000})
    by_arch = {r.architecture: r for r in node_sweep(config).reports}
    assert by_arch["trrnn"].stabilized
    assert not by_arch["rrnn"].stabilized


@pytest.mark.slow
def test_rrnn_needs_five_times_the_trrnn_nodes():
    config = ExperimentConfig.from_dict({"experiment": "node-sweep"}, scale="desk")
    result = node_sweep(config)
    smallest_trrnn = result.first_stabilizing("trrnn")
    smallest_rrnn = result.first_stabilizing("rrnn")
    assert smallest_trrnn is not None and smallest_trrnn <= 30
    assert smallest_rrnn is None or smallest_rrnn >= 5 * smallest_trrnn
