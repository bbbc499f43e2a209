"""
Embedding Module

Classical delay-embedding diagnostics:
    * autocorrelation (ACF) and embedding-lag selection,
    * false nearest neighbours (FNN) for the minimum embedding dimension,
    * delay-coordinate matrices and 2D delay projections.

Lag sign convention: a negative lag points into the past.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from usecase.signals_usecase import TimeSeries, as_values
from utils.constants import Constants
from utils.exceptions import DegenerateInputError, NotFoundError, ParameterError
from utils.logger import logger

defaults = Constants.Defaults

TAU0_MODES = ("abs-min", "first-zero", "min")


# ==========================================
# Domain Types
# ==========================================

@dataclass(frozen=True)
class EmbeddingSpec:
    """Delay tau0 (negative = past) and dimension M."""

    tau0: int
    M: int

    def __post_init__(self):
        if int(self.tau0) != self.tau0 or self.tau0 == 0:
            raise ParameterError(f"tau0 must be a non-zero integer (got {self.tau0})")
        if int(self.M) != self.M or self.M < 1:
            raise ParameterError(f"M must be an integer >= 1 (got {self.M})")

    @property
    def span(self) -> int:
        """Samples covered by one delay vector minus one: (M-1)|tau0|."""
        return (self.M - 1) * abs(self.tau0)


@dataclass(frozen=True, eq=False)
class DelayMatrix:
    """
    Reconstructed states, one per row.

    For tau0 < 0 the newest coordinate comes first:
        row r = [y_{r+(M-1)|tau0|}, y_{r+(M-2)|tau0|}, ..., y_r]
    For tau0 > 0:
        row r = [y_r, y_{r+tau0}, ..., y_{r+(M-1)tau0}]
    """

    entries: np.ndarray
    source_spec: EmbeddingSpec

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]

    @property
    def anchor_offset(self) -> int:
        """Series index of column 0 in row 0; row r is anchored at r + anchor_offset."""
        return self.source_spec.span if self.source_spec.tau0 < 0 else 0


# ==========================================
# Autocorrelation
# ==========================================

def acf(series: Union[TimeSeries, np.ndarray], max_lag: int) -> np.ndarray:
    """
    Func: Normalized (biased) autocorrelation rho(0..max_lag) of the mean-subtracted series.
    Args:
        * series: input signal
        * max_lag: last lag, must be < len(series)/2
    Return: array of length max_lag + 1, rho(0) = 1 exactly
    """
    y = as_values(series)
    n = y.shape[0]
    if max_lag < 1 or not max_lag < n / 2:
        raise ParameterError(f"max_lag must satisfy 1 <= max_lag < len/2 (got {max_lag}, len {n})")

    x = y - y.mean()
    c0 = float(np.dot(x, x))
    if c0 <= 0.0:
        raise DegenerateInputError("ACF of a constant series is undefined")

    rho = np.empty(max_lag + 1)
    rho[0] = 1.0
    for k in range(1, max_lag + 1):
        rho[k] = np.dot(x[:-k], x[k:]) / c0
    return np.clip(rho, -1.0, 1.0)


def select_tau0(acf_values: Sequence[float], mode: str = "abs-min") -> int:
    """
    Pick the embedding lag from an ACF and return it as a past (negative) lag.

    Modes:
        abs-min     first k >= 1 with |rho(k-1)| > |rho(k)| < |rho(k+1)|
        first-zero  first k >= 1 with rho(k) <= 0
        min         first local minimum of the signed rho

    Raises:
        NotFoundError: no qualifying lag within the ACF
    """
    rho = np.asarray(acf_values, dtype=float)
    if mode not in TAU0_MODES:
        raise ParameterError(f"unknown tau0 mode '{mode}' (expected one of {TAU0_MODES})")

    if mode == "first-zero":
        hits = np.nonzero(rho[1:] <= 0.0)[0]
        if hits.size:
            return -int(hits[0] + 1)
    else:
        curve = np.abs(rho) if mode == "abs-min" else rho
        for k in range(1, curve.shape[0] - 1):
            if curve[k - 1] > curve[k] < curve[k + 1]:
                return -k

    raise NotFoundError(
        f"no {mode} lag within max_lag={rho.shape[0] - 1}; increase max_lag"
    )


# ==========================================
# Delay coordinates
# ==========================================

def delay_embed(series: Union[TimeSeries, np.ndarray], spec: EmbeddingSpec) -> DelayMatrix:
    """
    Func: Build the delay-coordinate matrix.
    Args:
        * series: input signal
        * spec: (tau0, M)
    Return: DelayMatrix with len(series) - (M-1)|tau0| rows and M columns
    """
    y = as_values(series)
    rows = y.shape[0] - spec.span
    if rows < 1:
        raise ParameterError(
            f"series of length {y.shape[0]} too short for tau0={spec.tau0}, M={spec.M}"
        )

    step = abs(spec.tau0)
    if spec.tau0 < 0:
        offsets = [(spec.M - 1 - c) * step for c in range(spec.M)]
    else:
        offsets = [c * step for c in range(spec.M)]
    entries = np.column_stack([y[o:o + rows] for o in offsets])
    return DelayMatrix(entries, spec)


def delay_projection(series: Union[TimeSeries, np.ndarray], lags: Sequence[int]) -> Dict[int, np.ndarray]:
    """
    2D point clouds (y_n, y_{n+lag}) for each lag, used to inspect the
    unfolding of the attractor at candidate embedding lags.
    """
    y = as_values(series)
    clouds = {}
    for lag in lags:
        lag = int(lag)
        if lag == 0 or abs(lag) >= y.shape[0]:
            raise ParameterError(f"projection lag {lag} invalid for length {y.shape[0]}")
        embedded = delay_embed(y, EmbeddingSpec(lag, 2)).entries
        # column 0 is y_n and column 1 is y_{n+lag} for either sign
        clouds[lag] = embedded
    return clouds


# ==========================================
# False nearest neighbours
# ==========================================

def false_nearest_neighbors(
    series: Union[TimeSeries, np.ndarray],
    tau0: int,
    M_max: int = defaults.FNN_M_MAX,
    r_tol: float = defaults.FNN_R_TOL,
    fraction_threshold: float = defaults.FNN_FRACTION_THRESHOLD,
    a_tol: Optional[float] = defaults.FNN_A_TOL,
    theiler: Optional[int] = None,
) -> Tuple[Dict[int, float], Optional[int]]:
    """
    Fraction of false nearest neighbours per embedding dimension.

    For each M in 1..M_max the nearest neighbour of every M-dimensional state
    (outside a Theiler window of `theiler` samples, default |tau0|) is false when
        |y_i^(M+1) - y_j^(M+1)| > r_tol * d_M(i, j)
    or, when a_tol is set, when the (M+1)-dimensional distance exceeds
    a_tol times the series standard deviation.

    Returns:
        (fractions keyed by M, smallest M with fraction < fraction_threshold or None)
    """
    y = as_values(series)
    if M_max < 2:
        raise ParameterError(f"M_max must be >= 2 (got {M_max})")
    if tau0 == 0:
        raise ParameterError("tau0 must be non-zero")
    window = abs(int(tau0)) if theiler is None else int(theiler)
    if window < 0:
        raise ParameterError(f"theiler window must be >= 0 (got {theiler})")

    n_rows = y.shape[0] - M_max * abs(tau0)
    k = 2 * window + 2
    if n_rows < k + 1:
        raise ParameterError(
            f"insufficient data for FNN: {y.shape[0]} samples, tau0={tau0}, M_max={M_max}"
        )

    std = float(np.std(y))
    if std == 0.0:
        raise DegenerateInputError("FNN of a constant series is undefined")

    fractions: Dict[int, float] = {}
    m_min: Optional[int] = None
    for M in range(1, M_max + 1):
        extended = delay_embed(y, EmbeddingSpec(int(tau0), M + 1)).entries
        points = extended[:, :M]
        added = extended[:, M]

        dist, idx = cKDTree(points).query(points, k=min(k, points.shape[0]))
        rows = np.arange(points.shape[0])
        outside = np.abs(idx - rows[:, None]) > window
        first = np.argmax(outside, axis=1)
        valid = outside[rows, first]
        nn = idx[rows, first][valid]
        d_m = dist[rows, first][valid]
        own = rows[valid]

        gap = np.abs(added[own] - added[nn])
        false = gap > r_tol * d_m
        if a_tol is not None:
            false |= np.sqrt(d_m ** 2 + gap ** 2) / std > a_tol

        fractions[M] = float(np.mean(false)) if false.size else 1.0
        if m_min is None and fractions[M] < fraction_threshold:
            m_min = M

    if m_min is None:
        logger.warning(f"FNN fraction stayed above {fraction_threshold} up to M={M_max}")
    logger.debug(f"FNN fractions (tau0={tau0}): {fractions}")
    return fractions, m_min


def fnn_table(fractions: Dict[int, float]) -> List[Tuple[int, float]]:
    """(M, fraction) rows in ascending M."""
    return sorted(fractions.items())
