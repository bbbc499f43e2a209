import numpy as np
import pytest

from usecase.embedding_usecase import (
    EmbeddingSpec,
    acf,
    delay_embed,
    delay_projection,
    false_nearest_neighbors,
    fnn_table,
    select_tau0,
)
from usecase.signals_usecase import MGParams, gen_mackey_glass
from utils.exceptions import DegenerateInputError, NotFoundError, ParameterError


# ==========================================
# ACF and lag selection
# ==========================================

def test_acf_starts_at_one_and_is_bounded(mg_series):
    rho = acf(mg_series, 100)
    assert rho[0] == 1.0
    assert rho.shape == (101,)
    assert np.all(np.abs(rho) <= 1.0)


def test_acf_of_cosine(cosine24):
    rho = acf(cosine24, 30)
    assert abs(rho[6]) < 0.01
    assert rho[12] == pytest.approx(-1.0, abs=0.01)


def test_acf_rejects_constant_series():
    with pytest.raises(DegenerateInputError):
        acf(np.ones(100), 10)


def test_acf_rejects_long_lag():
    with pytest.raises(ParameterError):
        acf(np.arange(20.0), 10)


def test_select_tau0_first_abs_minimum():
    assert select_tau0([1.0, 0.8, 0.5, 0.3, 0.4, 0.2]) == -3


def test_select_tau0_modes_on_cosine(cosine24):
    rho = acf(cosine24, 30)
    assert select_tau0(rho, "abs-min") == -6
    assert select_tau0(rho, "min") == -12
    assert select_tau0(rho, "first-zero") in (-6, -7)


def test_select_tau0_not_found():
    with pytest.raises(NotFoundError):
        select_tau0([1.0, 0.9, 0.8, 0.7])


def test_select_tau0_ignores_amplitude(mg_series):
    rho = acf(mg_series.values, 60)
    scaled = acf(3.5 * mg_series.values, 60)
    assert select_tau0(rho) == select_tau0(scaled)


# ==========================================
# Delay coordinates
# ==========================================

def test_delay_embed_past_lag_is_newest_first():
    matrix = delay_embed(np.arange(5.0), EmbeddingSpec(-1, 2))
    assert matrix.entries.tolist() == [[1, 0], [2, 1], [3, 2], [4, 3]]
    assert matrix.anchor_offset == 1


def test_delay_embed_future_lag():
    matrix = delay_embed(np.arange(5.0), EmbeddingSpec(2, 2))
    assert matrix.entries.tolist() == [[0, 2], [1, 3], [2, 4]]
    assert matrix.anchor_offset == 0


def test_delay_embed_single_dimension_is_identity():
    y = np.linspace(0.0, 1.0, 9)
    matrix = delay_embed(y, EmbeddingSpec(-4, 1))
    assert np.array_equal(matrix.entries[:, 0], y)


def test_delay_embed_shape_for_random_sizes(rng):
    for _ in range(50):
        n = int(rng.integers(20, 200))
        tau0 = int(rng.choice([-1, 1])) * int(rng.integers(1, 6))
        M = int(rng.integers(1, 4))
        matrix = delay_embed(rng.standard_normal(n), EmbeddingSpec(tau0, M))
        assert matrix.rows == n - (M - 1) * abs(tau0)
        assert matrix.cols == M


def test_delay_embed_entries_follow_index_rule():
    y = np.arange(100.0)
    matrix = delay_embed(y, EmbeddingSpec(-12, 4))
    for r in (0, 17, matrix.rows - 1):
        assert matrix.entries[r].tolist() == [y[r + 36], y[r + 24], y[r + 12], y[r]]


def test_delay_embed_too_short():
    with pytest.raises(ParameterError):
        delay_embed(np.arange(10.0), EmbeddingSpec(-5, 3))


def test_embedding_spec_rejects_zero_lag():
    with pytest.raises(ParameterError):
        EmbeddingSpec(0, 2)


def test_delay_projection_pairs_present_and_past():
    y = np.arange(30.0)
    clouds = delay_projection(y, [-7, 3])
    assert np.all(clouds[-7][:, 1] == clouds[-7][:, 0] - 7)
    assert np.all(clouds[3][:, 1] == clouds[3][:, 0] + 3)


# ==========================================
# False nearest neighbours
# ==========================================

def test_fnn_sine_needs_two_dimensions():
    n = np.arange(3000)
    period = 24.37
    y = np.sin(2 * np.pi * n / period)
    fractions, m_min = false_nearest_neighbors(y, -6, M_max=4)
    assert fractions[1] > 0.1
    assert m_min == 2


def test_fnn_white_noise_never_unfolds(rng):
    fractions, m_min = false_nearest_neighbors(rng.standard_normal(2000), -1, M_max=6)
    assert m_min is None
    assert min(fractions.values()) > 0.05


def test_fnn_insufficient_data():
    with pytest.raises(ParameterError):
        false_nearest_neighbors(np.arange(30.0), -12, M_max=3)


def test_fnn_table_is_sorted():
    assert fnn_table({3: 0.1, 1: 0.5, 2: 0.2}) == [(1, 0.5), (2, 0.2), (3, 0.1)]


@pytest.mark.slow
def test_mg_embedding_lag_and_dimension():
    series = gen_mackey_glass(MGParams(), 10000, "random", seed=20190101)
    tau0 = select_tau0(acf(series, 100))
    assert tau0 == -12
    _, m_min = false_nearest_neighbors(series, tau0, M_max=8)
    assert m_min in (3, 4, 5)
