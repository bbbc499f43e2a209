import numpy as np
import pytest

from usecase.embedding_usecase import EmbeddingSpec, delay_embed
from usecase.reservoir_usecase import build_reservoir, drive, prepare_sequence
from usecase.signals_usecase import MGParams, gen_mackey_glass
from usecase.takens_analysis_usecase import (
    CcaProfile,
    WindowFilterSpec,
    cca_profile,
    cross_correlation,
    epsilon_bounds,
    mu_scan,
    node_projection,
    pair_distances,
    tau_scan,
    window_filter,
)
from utils.config import ExperimentConfig
from utils.constants import Constants
from utils.exceptions import DegenerateInputError, ParameterError

col = Constants.Columns


def _profile(best_lag, flagged=None):
    best_lag = np.asarray(best_lag, dtype=int)
    flagged = np.zeros(best_lag.shape[0], dtype=bool) if flagged is None else np.asarray(flagged)
    return CcaProfile(np.arange(best_lag.shape[0]), best_lag, np.ones(best_lag.shape[0]), flagged, ())


def _brute_force_cca(S, y, max_lag):
    """Direct per-node, per-lag Pearson scan with the same tie rule."""
    n, m = S.shape
    lags = sorted(range(-max_lag, max_lag + 1), key=lambda k: (abs(k), k > 0))
    best_lag, best_cc = np.zeros(m, dtype=int), np.zeros(m)
    for i in range(m):
        best = -1.0
        for k in lags:
            if k >= 0:
                a, b = S[:n - k, i], y[k:]
            else:
                a, b = S[-k:, i], y[:n + k]
            ac, bc = a - a.mean(), b - b.mean()
            value = min(abs((ac * bc).sum() / np.sqrt((ac * ac).sum() * (bc * bc).sum())), 1.0)
            if value > best:
                best, best_lag[i] = value, k
        best_cc[i] = best
    return best_lag, best_cc


# ==========================================
# Cross-correlation
# ==========================================

def test_cross_correlation_identity_peaks_at_zero(rng):
    y = rng.standard_normal(500)
    lags, values = cross_correlation(y, y, 10)
    assert lags[np.argmax(values)] == 0
    assert values[lags == 0][0] == pytest.approx(1.0)


def test_cross_correlation_pure_delay(rng):
    z = rng.standard_normal(505)
    x, y = z[:-5], z[5:]
    lags, values = cross_correlation(x, y, 10)
    assert lags[np.argmax(np.abs(values))] == -5
    assert values[lags == -5][0] == pytest.approx(1.0)


def test_cross_correlation_of_independent_noise_is_small(rng):
    _, values = cross_correlation(rng.standard_normal(10000), rng.standard_normal(10000), 60)
    assert np.max(np.abs(values)) < 0.05


def test_cross_correlation_rejects_constant_series(rng):
    with pytest.raises(DegenerateInputError):
        cross_correlation(np.ones(100), rng.standard_normal(100), 5)


# ==========================================
# CCA profile
# ==========================================

def test_cca_profile_recovers_delays(rng):
    z = rng.standard_normal(809)
    y = z[9:]
    states = np.column_stack([z[4:4 + 800], z[:800]])
    profile = cca_profile(states, y, 20)
    assert profile.best_lag.tolist() == [-5, -9]
    assert profile.cc_max == pytest.approx([1.0, 1.0])
    assert profile.l_min == -9 and profile.l_max == -5


def test_cca_profile_flags_constant_nodes(rng):
    y = rng.standard_normal(300)
    states = np.column_stack([y, np.full(300, 0.25)])
    profile = cca_profile(states, y, 5)
    assert profile.flagged.tolist() == [False, True]
    assert profile.best_lag[1] == 0
    assert profile.cc_max[1] == 0.0
    assert profile.defined.tolist() == [0]


def test_cca_profile_matches_brute_force(rng):
    res = build_reservoir(8, 1.1, 0.8, 0.2, seed=21)
    y = rng.standard_normal(200)
    driven = drive(res, y)
    profile = cca_profile(driven, y, 12)
    best_lag, best_cc = _brute_force_cca(driven.states, y, 12)
    assert profile.best_lag.tolist() == best_lag.tolist()
    assert np.array_equal(profile.cc_max, best_cc)


def test_cca_profile_lags_ignore_input_scale(small_reservoir, mg_series):
    y = mg_series.values[:600] - mg_series.values[:600].mean()
    driven = drive(small_reservoir, y, washout=100)
    a = cca_profile(driven, y[100:], 30)
    b = cca_profile(driven, 4.0 * y[100:], 30)
    assert a.best_lag.tolist() == b.best_lag.tolist()


def test_cca_profile_subset_restricts_nodes():
    profile = _profile([0, -12, -30, 5])
    sub = profile.subset([3, 1, 1])
    assert sub.node_ids.tolist() == [1, 3]
    assert sub.l_min == -12 and sub.l_max == 5


def test_cca_profile_rows_for_dump():
    assert _profile([0, -3]).rows() == [(0, 0, 1.0), (1, -3, 1.0)]


# ==========================================
# Window filter
# ==========================================

def test_window_filter_selects_lags_near_multiples():
    profile = _profile([0, -12, -13, -30, 5])
    selected = window_filter(profile, WindowFilterSpec(-12, 3, 1))
    assert selected.tolist() == [0, 1, 2]


def test_window_filter_zero_lag_always_selected():
    for tau in (-25, -12, -1, 7):
        assert 0 in window_filter(_profile([0]), WindowFilterSpec(tau, 0, 1)).tolist()


def test_window_filter_overlap_duplicates_nodes():
    profile = _profile([0, -1, -2])
    selected = window_filter(profile, WindowFilterSpec(-3, 3, 4))
    assert selected.size > 3
    assert selected.tolist().count(0) == 3


def test_window_filter_skips_flagged_nodes():
    profile = _profile([0, 0], flagged=[False, True])
    assert window_filter(profile, WindowFilterSpec(-12, 3, 4)).tolist() == [0]


def test_window_filter_is_monotone_in_delta(rng):
    profile = _profile(rng.integers(-60, 61, size=200))
    for delta in range(0, 6):
        narrow = set(window_filter(profile, WindowFilterSpec(-12, delta, 4)).tolist())
        wide = set(window_filter(profile, WindowFilterSpec(-12, delta + 1, 4)).tolist())
        assert narrow <= wide


def test_window_filter_spec_validation():
    with pytest.raises(ParameterError):
        WindowFilterSpec(0)
    with pytest.raises(ParameterError):
        WindowFilterSpec(-12, -1)


# ==========================================
# Distortion bounds
# ==========================================

def _embedding_as_states(y, scale=1.0):
    embed = delay_embed(y, EmbeddingSpec(-2, 3))
    return embed, scale * embed.entries


def test_identity_projection_has_no_distortion(rng):
    embed, states = _embedding_as_states(rng.standard_normal(300))
    bounds = epsilon_bounds(embed, states, _profile([0, -2, -4]), "per-pair-ratio", state_offset=embed.anchor_offset)
    assert bounds.eps_min == pytest.approx(1.0, abs=1e-12)
    assert bounds.eps_max == pytest.approx(1.0, abs=1e-12)
    assert bounds.eps1 == pytest.approx(0.0, abs=1e-12)
    assert bounds.eps2 == pytest.approx(0.0, abs=1e-12)
    assert bounds.h == 3


def test_doubled_projection(rng):
    embed, states = _embedding_as_states(rng.standard_normal(300), 2.0)
    bounds = epsilon_bounds(embed, states, _profile([0, -2, -4]), "per-pair-ratio", state_offset=embed.anchor_offset)
    assert bounds.eps_max == pytest.approx(2.0, abs=1e-12)
    assert bounds.eps2 == pytest.approx(1.0, abs=1e-12)


def test_replicated_coordinates_keep_bounds(rng):
    embed, states = _embedding_as_states(rng.standard_normal(300))
    doubled = np.hstack([states, states])
    bounds = epsilon_bounds(embed, doubled, _profile([0, -2, -4, 0, -2, -4]), "per-pair-ratio",
                            state_offset=embed.anchor_offset)
    assert bounds.h == 6
    assert bounds.eps_min == pytest.approx(1.0, abs=1e-12)
    assert bounds.eps_max == pytest.approx(1.0, abs=1e-12)


def test_mean_mode_is_per_coordinate(rng):
    embed, states = _embedding_as_states(rng.standard_normal(300))
    profile = _profile([0, -2, -4])
    single = epsilon_bounds(embed, states, profile, "mean", state_offset=embed.anchor_offset)
    tripled = epsilon_bounds(embed, np.hstack([states] * 3), _profile([0, -2, -4] * 3), "mean",
                             state_offset=embed.anchor_offset)
    assert tripled.norm_max == pytest.approx(np.sqrt(3) * single.norm_max)
    assert tripled.eps_max == pytest.approx(single.eps_max)
    assert tripled.eps_min == pytest.approx(single.eps_min)


def test_componentwise_norms_sandwich_every_pair(small_reservoir, mg_series):
    y = mg_series.values[:800] - mg_series.values[:800].mean()
    driven = drive(small_reservoir, y, washout=100)
    profile = cca_profile(driven, y[100:], 30)
    embed = delay_embed(y, EmbeddingSpec(-12, 4))
    bounds = epsilon_bounds(embed, driven, profile, "mean", state_offset=100)
    distances = pair_distances(embed, driven, profile, state_offset=100)
    assert np.all(bounds.norm_min <= distances)
    assert np.all(distances <= bounds.norm_max)
    assert bounds.eps_min <= bounds.eps_max
    assert bounds.eps1 == pytest.approx(1.0 - bounds.eps_min)


def test_bounds_need_two_aligned_rows(rng):
    embed, states = _embedding_as_states(rng.standard_normal(20))
    with pytest.raises(ParameterError):
        epsilon_bounds(embed, states[:3], _profile([0, -2, -4]), state_offset=100)


def test_bounds_need_a_defined_node(rng):
    embed, states = _embedding_as_states(rng.standard_normal(50))
    profile = _profile([0, 0, 0], flagged=[True, True, True])
    with pytest.raises(DegenerateInputError):
        epsilon_bounds(embed, states, profile, state_offset=embed.anchor_offset)


def test_unknown_eps_mode(rng):
    embed, states = _embedding_as_states(rng.standard_normal(50))
    with pytest.raises(ParameterError):
        epsilon_bounds(embed, states, _profile([0, -2, -4]), "median", state_offset=embed.anchor_offset)


# ==========================================
# Projections and scans
# ==========================================

def test_node_projection_pairs_zero_lag_node_with_lagged_node(rng):
    states = rng.standard_normal((50, 3))
    profile = CcaProfile(np.arange(3), np.array([0, -7, -7]), np.array([0.9, 0.5, 0.8]),
                         np.zeros(3, dtype=bool), ())
    clouds = node_projection(states, profile, [-7, -12])
    assert list(clouds) == [-7]
    assert np.array_equal(clouds[-7], states[:, [0, 2]])


def test_tau_scan_reports_baseline_and_grid(tiny_config_data):
    config = ExperimentConfig.from_dict({**tiny_config_data, "experiment": "scan-tau", "tau0_net_grid": [-12, -6]})
    result = tau_scan(config)
    assert [entry[col.TAU0_NET] for entry in result.table] == [-12, -6]
    assert "baseline_mean_nmse" in result.summary
    assert len(result.rows) == 3
    assert all(entry[col.MEAN_NODES] <= 10 * 9 for entry in result.table)


def test_mu_scan_reports_bounds_per_mu(tiny_config_data):
    config = ExperimentConfig.from_dict({**tiny_config_data, "experiment": "scan-mu", "mu_grid": [0.5, 1.1]})
    result = mu_scan(config)
    assert [entry[col.MU] for entry in result.table] == [0.5, 1.1]
    for entry in result.table:
        assert col.EPS1 in entry and col.EPS2 in entry


# ==========================================
# Source-scale reproductions
# ==========================================

def _benchmark_profiles(mu, networks):
    values = gen_mackey_glass(MGParams(), 3301, "random", seed=20190101).values
    y = prepare_sequence(values, 3000, 300).train_input
    profiles = []
    for k in range(networks):
        driven = drive(build_reservoir(1000, mu, 0.8, 0.2, seed=k), y, washout=1000)
        profiles.append(cca_profile(driven, y[1000:], 60))
    return profiles


@pytest.mark.slow
def test_cca_lags_spread_near_critical_mu():
    lags = np.concatenate([p.best_lag[p.defined] for p in _benchmark_profiles(1.1, 5)])
    assert lags.min() <= -40
    assert lags.max() >= 35


@pytest.mark.slow
def test_cca_lags_concentrate_on_two_embedding_lags_at_small_mu():
    profile = _benchmark_profiles(0.1, 1)[0]
    lags = profile.best_lag[profile.defined]
    near = (np.abs(lags) <= 4) | (np.abs(lags + 24) <= 4)
    assert near.mean() >= 0.7


@pytest.mark.slow
def test_mu_scan_bound_regimes():
    config = ExperimentConfig.from_dict({"experiment": "scan-mu", "mu_grid": [0.1, 0.5, 1.1, 1.5],
                                         "ensemble_networks": 2, "ensemble_sequences": 2})
    table = {entry[col.MU]: entry for entry in mu_scan(config).table}
    assert table[0.1][col.EPS2] < 1
    assert table[1.5][col.EPS2] > table[0.1][col.EPS2]
    best = min(table.values(), key=lambda entry: entry[col.MEAN_NMSE])
    assert best[col.EPS2] >= 1
    assert table[1.5][col.MEAN_NMSE] >= 5 * best[col.MEAN_NMSE]


@pytest.mark.slow
@pytest.mark.xfail(strict=False, reason="the unfiltered 1000-node readout outperforms window-filtered selections "
                                        "at the default weight scale")
def test_tau_scan_filtering_beats_baseline_and_short_windows_overfit():
    config = ExperimentConfig.from_dict({"experiment": "scan-tau", "tau0_net_grid": [-12, -11, -3, -2]},
                                        scale="desk")
    result = tau_scan(config)
    baseline = result.summary["baseline_mean_nmse"]
    table = {entry[col.TAU0_NET]: entry for entry in result.table}
    for tau in (-12, -11):
        assert table[tau][col.MEAN_NMSE] <= baseline
        assert 400 <= table[tau][col.MEAN_NODES] <= 600
    for tau in (-3, -2):
        assert table[tau][col.MEAN_NMSE] >= 2 * baseline
