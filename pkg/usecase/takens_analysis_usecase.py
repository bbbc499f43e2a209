"""
Takens Analysis Module

Reads the reservoir as an implicit delay embedding:
    * cross-correlation analysis (CCA): per-node best lag and max |CC| with the input,
    * lag-window readout filtering around multiples of a candidate lag,
    * the tau0_net scan of filtered readouts,
    * distortion bounds (eps1, eps2) of the network's random projection,
    * the mu scan of bounds and prediction quality.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from usecase.embedding_usecase import DelayMatrix, EmbeddingSpec, delay_embed
from usecase.reservoir_usecase import (
    FeatureSpec,
    ProgressCallback,
    Reservoir,
    RunMetrics,
    RunRow,
    StateMatrix,
    drive,
    evaluate_readout,
    prepare_sequence,
    run_ensemble,
    summarize,
)
from usecase.signals_usecase import TimeSeries, as_values
from utils.config import ExperimentConfig
from utils.constants import Constants
from utils.exceptions import DegenerateInputError, ParameterError
from utils.logger import logger
from utils.seeds import SeedPair

defaults = Constants.Defaults
col = Constants.Columns

EPS_MODES = ("mean", "per-pair-ratio")


# ==========================================
# Domain Types
# ==========================================

@dataclass(frozen=True, eq=False)
class CcaProfile:
    """
    Per-node best lag and max |CC| with the input.

    node_ids maps profile rows to state columns; flagged nodes (constant
    columns) carry best_lag 0 and cc_max 0 and have no defined lag.
    """

    node_ids: np.ndarray
    best_lag: np.ndarray
    cc_max: np.ndarray
    flagged: np.ndarray
    lags: Tuple[int, ...]

    def __len__(self) -> int:
        return self.node_ids.shape[0]

    @property
    def defined(self) -> np.ndarray:
        """Row positions of nodes with a defined lag."""
        return np.nonzero(~self.flagged)[0]

    @property
    def l_min(self) -> int:
        rows = self.defined
        return int(self.best_lag[rows].min()) if rows.size else 0

    @property
    def l_max(self) -> int:
        rows = self.defined
        return int(self.best_lag[rows].max()) if rows.size else 0

    def subset(self, nodes: Sequence[int]) -> "CcaProfile":
        """Profile restricted to the given node ids (duplicates collapse)."""
        wanted = np.unique(np.asarray(nodes, dtype=int))
        rows = np.nonzero(np.isin(self.node_ids, wanted))[0]
        return CcaProfile(
            self.node_ids[rows], self.best_lag[rows], self.cc_max[rows], self.flagged[rows], self.lags
        )

    def rows(self) -> List[Tuple[int, int, float]]:
        """(node_id, best_lag, cc_max) table rows."""
        return [(int(n), int(l), float(c)) for n, l, c in zip(self.node_ids, self.best_lag, self.cc_max)]


@dataclass(frozen=True)
class WindowFilterSpec:
    """Windows of half-width delta centred at n * tau0_net, n in -M..M."""

    tau0_net: int
    delta: int = defaults.WINDOW_DELTA
    M: int = defaults.WINDOW_M

    def __post_init__(self):
        if self.tau0_net == 0:
            raise ParameterError("tau0_net must be non-zero")
        if self.delta < 0:
            raise ParameterError(f"window delta must be >= 0 (got {self.delta})")
        if self.M < 1:
            raise ParameterError(f"window M must be >= 1 (got {self.M})")


@dataclass(frozen=True)
class EpsilonBounds:
    """Distortion limits of the projection; eps1 = 1 - eps_min, eps2 = eps_max - 1."""

    eps1: float
    eps2: float
    eps_min: float
    eps_max: float
    h: int
    mode: str
    norm_min: float = float("nan")
    norm_max: float = float("nan")

    @classmethod
    def from_ratios(cls, eps_min: float, eps_max: float, h: int, mode: str,
                    norm_min: float, norm_max: float) -> "EpsilonBounds":
        return cls(1.0 - eps_min, eps_max - 1.0, eps_min, eps_max, h, mode, norm_min, norm_max)


@dataclass
class ScanResult:
    """Rows of a sweep plus the per-grid-point table."""

    rows: List[RunRow]
    table: List[Dict[str, float]]
    summary: Dict[str, float] = field(default_factory=dict)


# ==========================================
# Cross-correlation
# ==========================================

def lag_grid(lag_range: Union[int, Sequence[int]]) -> np.ndarray:
    """An int L means -L..L; otherwise the explicit lags."""
    if isinstance(lag_range, (int, np.integer)):
        if lag_range < 0:
            raise ParameterError(f"lag range must be >= 0 (got {lag_range})")
        return np.arange(-int(lag_range), int(lag_range) + 1)
    lags = np.asarray(list(lag_range), dtype=int)
    if lags.size == 0:
        raise ParameterError("lag range is empty")
    return lags


def _overlap(n: int, lag: int) -> Tuple[slice, slice]:
    """Slices pairing x_i with y_{i+lag}."""
    if lag >= 0:
        return slice(0, n - lag), slice(lag, n)
    return slice(-lag, n), slice(0, n + lag)


def _pearson_columns(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Pearson correlation of each column of xs with ys; zero where a segment is constant."""
    # one contiguous row per node; every sum runs along a single row
    xt = np.ascontiguousarray(xs.T)
    xc = xt - xt.mean(axis=1, keepdims=True)
    yc = ys - ys.mean()
    num = (xc * yc).sum(axis=1)
    den = np.sqrt((xc * xc).sum(axis=1) * (yc * yc).sum())
    out = np.zeros(xt.shape[0])
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def cross_correlation(
    x: Union[TimeSeries, np.ndarray],
    y: Union[TimeSeries, np.ndarray],
    lag_range: Union[int, Sequence[int]] = defaults.CCA_MAX_LAG,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Func: Normalised cross-correlation over a lag grid.
    Args:
        * x, y: equal-length, non-constant series
        * lag_range: int L (-L..L) or explicit lags; lag k pairs x_n with y_{n+k}
    Return: (lags, values) with values in [-1, 1]
    """
    xv, yv = as_values(x), as_values(y)
    if xv.shape != yv.shape:
        raise ParameterError(f"cross_correlation needs equal lengths (got {xv.shape[0]}, {yv.shape[0]})")
    if np.ptp(xv) == 0 or np.ptp(yv) == 0:
        raise DegenerateInputError("cross_correlation of a constant series is undefined")

    lags = lag_grid(lag_range)
    n = xv.shape[0]
    if np.max(np.abs(lags)) >= n - 1:
        raise ParameterError(f"lags up to {np.max(np.abs(lags))} exceed series length {n}")
    values = np.empty(lags.shape[0])
    for i, lag in enumerate(lags):
        sx, sy = _overlap(n, int(lag))
        values[i] = _pearson_columns(xv[sx, None], yv[sy])[0]
    return lags, np.clip(values, -1.0, 1.0)


def cca_profile(
    states: Union[StateMatrix, np.ndarray],
    input: Union[TimeSeries, np.ndarray],
    lag_range: Union[int, Sequence[int]] = defaults.CCA_MAX_LAG,
) -> CcaProfile:
    """
    Func: Best lag and max |CC| of every node against the input that drove it.
    Args:
        * states: T x m responses, row n produced by input[n]
        * input: the T driving samples
        * lag_range: CCA lag grid
    Return: CcaProfile; ties go to the smallest |lag|, then the negative lag
    """
    S = states.states if isinstance(states, StateMatrix) else np.asarray(states, dtype=float)
    y = as_values(input)
    if S.shape[0] != y.shape[0]:
        raise ParameterError(f"states have {S.shape[0]} rows but input has {y.shape[0]} samples")
    if np.ptp(y) == 0:
        raise DegenerateInputError("CCA input is constant")

    lags = lag_grid(lag_range)
    n, m = S.shape
    if np.max(np.abs(lags)) >= n - 1:
        raise ParameterError(f"lags up to {np.max(np.abs(lags))} exceed {n} rows")

    # preference order: |lag| ascending, negative before positive
    order = sorted(range(lags.shape[0]), key=lambda i: (abs(int(lags[i])), int(lags[i]) > 0))
    table = np.empty((lags.shape[0], m))
    for i, lag in enumerate(lags):
        sx, sy = _overlap(n, int(lag))
        table[i] = np.abs(_pearson_columns(S[sx], y[sy]))

    ranked = table[order]
    best_pos = np.argmax(ranked == ranked.max(axis=0), axis=0)
    best_lag = lags[np.asarray(order)[best_pos]]
    cc_max = np.clip(ranked[best_pos, np.arange(m)], 0.0, 1.0)

    flagged = np.ptp(S, axis=0) == 0
    if flagged.any():
        logger.warning(f"CCA: {int(flagged.sum())} constant node(s) flagged")
        best_lag = np.where(flagged, 0, best_lag)
        cc_max = np.where(flagged, 0.0, cc_max)

    return CcaProfile(np.arange(m), best_lag.astype(int), cc_max, flagged, tuple(int(l) for l in lags))


# ==========================================
# Window filtering
# ==========================================

def window_filter(profile: CcaProfile, spec: WindowFilterSpec) -> np.ndarray:
    """
    Node ids selected once per window n in -M..M with |best_lag - n*tau0_net| <= delta.
    Overlapping windows select a node more than once; flagged nodes are never selected.
    """
    rows = profile.defined
    lags = profile.best_lag[rows]
    selected = []
    for n in range(-spec.M, spec.M + 1):
        hit = np.abs(lags - n * spec.tau0_net) <= spec.delta
        selected.append(profile.node_ids[rows[hit]])
    return np.concatenate(selected).astype(int) if selected else np.zeros(0, dtype=int)


# ==========================================
# Distortion bounds
# ==========================================

def align_embedding(
    input_embed: DelayMatrix,
    states: Union[StateMatrix, np.ndarray],
    state_offset: int = 0,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Pair each delay vector with the state produced by its newest sample.

    Embedding row r is anchored at series index r + anchor_offset; state row i
    was produced by series index state_offset + i.
    """
    S = states.states if isinstance(states, StateMatrix) else np.asarray(states, dtype=float)
    anchor = input_embed.anchor_offset
    first = max(anchor, state_offset)
    last = min(anchor + input_embed.rows, state_offset + S.shape[0])
    if last - first < 2:
        raise ParameterError(f"fewer than 2 aligned rows (embedding anchor {anchor}, state offset {state_offset})")
    Y = input_embed.entries[first - anchor:last - anchor]
    X = S[first - state_offset:last - state_offset]
    return Y, X


def epsilon_bounds(
    input_embed: DelayMatrix,
    states: Union[StateMatrix, np.ndarray],
    profile: CcaProfile,
    mode: str = "mean",
    state_offset: int = 0,
) -> EpsilonBounds:
    """
    Func: Empirical distortion bounds of the map from delay vectors to node responses.
    Args:
        * input_embed: delay vectors of the driving input
        * states: node responses (see align_embedding for state_offset)
        * profile: CCA profile; nodes with defined lags form phi, ordered by lag
        * mode: "mean" divides the componentwise min/max norms by the mean
                consecutive Takens distance; "per-pair-ratio" takes min/max over n
                of the per-pair distance ratio
    Return: EpsilonBounds

    phi has h coordinates and the delay vectors M, so both ratios carry a
    factor sqrt(M / h) to compare per-coordinate distances. norm_min and
    norm_max are the unscaled componentwise norms.
    """
    if mode not in EPS_MODES:
        raise ParameterError(f"unknown eps mode '{mode}' (expected one of {EPS_MODES})")
    Y, X = align_embedding(input_embed, states, state_offset)

    rows = profile.defined
    order = rows[np.lexsort((profile.node_ids[rows], profile.best_lag[rows]))]
    phi_cols = profile.node_ids[order]
    h = int(phi_cols.shape[0])
    if h == 0:
        raise DegenerateInputError("no node with a defined lag to project onto")

    d_phi = np.diff(X[:, phi_cols], axis=0)
    d_y = np.diff(Y, axis=0)
    takens_dist = np.sqrt((d_y * d_y).sum(axis=1))

    sq = d_phi * d_phi
    norm_min = float(np.sqrt(sq.min(axis=0).sum()))
    norm_max = float(np.sqrt(sq.max(axis=0).sum()))

    scale = float(np.sqrt(Y.shape[1] / h))
    if mode == "mean":
        denom = float(np.mean(takens_dist))
        if denom == 0.0:
            raise DegenerateInputError("delay vectors do not move")
        eps_min, eps_max = scale * norm_min / denom, scale * norm_max / denom
    else:
        moving = takens_dist > 0
        if not moving.any():
            raise DegenerateInputError("delay vectors do not move")
        ratios = scale * np.sqrt(sq.sum(axis=1))[moving] / takens_dist[moving]
        eps_min, eps_max = float(ratios.min()), float(ratios.max())

    return EpsilonBounds.from_ratios(eps_min, eps_max, h, mode, norm_min, norm_max)


def pair_distances(
    input_embed: DelayMatrix,
    states: Union[StateMatrix, np.ndarray],
    profile: CcaProfile,
    state_offset: int = 0,
) -> np.ndarray:
    """||phi(y_{n+1}) - phi(y_n)|| for every aligned consecutive pair."""
    _, X = align_embedding(input_embed, states, state_offset)
    rows = profile.defined
    order = rows[np.lexsort((profile.node_ids[rows], profile.best_lag[rows]))]
    d_phi = np.diff(X[:, profile.node_ids[order]], axis=0)
    return np.sqrt((d_phi * d_phi).sum(axis=1))


# ==========================================
# Projections
# ==========================================

def node_projection(
    states: Union[StateMatrix, np.ndarray],
    profile: CcaProfile,
    lags: Sequence[int],
) -> Dict[int, np.ndarray]:
    """
    2D clouds (x^i, x^j): i is the strongest node with best lag 0, j the
    strongest node whose best lag equals the requested lag.
    """
    S = states.states if isinstance(states, StateMatrix) else np.asarray(states, dtype=float)
    rows = profile.defined

    def strongest(lag: int) -> Optional[int]:
        hits = rows[profile.best_lag[rows] == lag]
        if hits.size == 0:
            return None
        return int(profile.node_ids[hits[np.argmax(profile.cc_max[hits])]])

    reference = strongest(0)
    clouds = {}
    for lag in lags:
        partner = strongest(int(lag))
        if reference is None or partner is None:
            logger.warning(f"No node pair for projection lag {lag}")
            continue
        clouds[int(lag)] = np.column_stack([S[:, reference], S[:, partner]])
    return clouds


# ==========================================
# Helpers shared by the scans
# ==========================================

def takens_spec(config: ExperimentConfig) -> EmbeddingSpec:
    return EmbeddingSpec(config.embedding_tau0, config.embedding_M)


def training_bounds(
    split_input: np.ndarray,
    driven: StateMatrix,
    profile: CcaProfile,
    spec: EmbeddingSpec,
    mode: str,
) -> Optional[EpsilonBounds]:
    """Bounds over the retained training window; None when not computable."""
    try:
        embed = delay_embed(split_input, spec)
        return epsilon_bounds(embed, driven, profile, mode, state_offset=driven.washout)
    except (ParameterError, DegenerateInputError) as e:
        logger.warning(f"Epsilon bounds not computable: {e}")
        return None


def aggregate(rows: Sequence[RunRow], key: str, grid: Sequence) -> List[Dict[str, float]]:
    """One summary row per grid value, with ensemble-averaged eps when present."""
    table = []
    for value in grid:
        group = [row for row in rows if row.extras.get(key) == value]
        if not group:
            continue
        entry = {key: value, **summarize([row.metrics for row in group])}
        eps1 = [row.extras[col.EPS1] for row in group if row.extras.get(col.EPS1) is not None]
        eps2 = [row.extras[col.EPS2] for row in group if row.extras.get(col.EPS2) is not None]
        if col.EPS1 in group[0].extras:
            entry[col.EPS1] = float(np.mean(eps1)) if eps1 else float("nan")
            entry[col.EPS2] = float(np.mean(eps2)) if eps2 else float("nan")
        table.append(entry)
    return table


def _empty_selection_metrics() -> RunMetrics:
    return RunMetrics(defaults.NMSE_CAP, True, True, float("nan"), 0)


# ==========================================
# Scans
# ==========================================

def tau_scan(config: ExperimentConfig, progress: ProgressCallback = None) -> ScanResult:
    """
    Func: Filtered-readout scan over tau0_net.
    Args:
        * config: reservoir ensemble, window_delta, window_M, tau0_net_grid, cca_max_lag
        * progress: optional callback(done, total)
    Return: ScanResult; summary holds the unfiltered baseline
    """
    logger.info("START takens_analysis.tau_scan")
    grid = [int(t) for t in config.tau0_net_grid]

    def task(res: Reservoir, values: np.ndarray, pair: SeedPair) -> List[RunRow]:
        split = prepare_sequence(values, config.train_len, config.horizon)
        driven = drive(res, split.train_input, washout=config.washout)
        profile = cca_profile(driven, split.train_input[driven.washout:], config.cca_max_lag)

        baseline = evaluate_readout(res, split, driven, None, config.nmse_mode, config.svd_rtol)
        out = [RunRow(pair, baseline, {col.TAU0_NET: None, "grid_index": -1})]
        for i, tau in enumerate(grid):
            nodes = window_filter(profile, WindowFilterSpec(tau, config.window_delta, config.window_M))
            if nodes.size == 0:
                metrics = _empty_selection_metrics()
            else:
                metrics = evaluate_readout(res, split, driven, FeatureSpec.mask(nodes),
                                           config.nmse_mode, config.svd_rtol)
            out.append(RunRow(pair, metrics, {col.TAU0_NET: tau, "grid_index": i}))
        return out

    rows = run_ensemble(config, task, progress=progress)
    baseline = summarize([row.metrics for row in rows if row.extras["grid_index"] == -1])
    table = aggregate([row for row in rows if row.extras["grid_index"] >= 0], col.TAU0_NET, grid)
    logger.info("END takens_analysis.tau_scan")
    return ScanResult(rows, table, {f"baseline_{k}": v for k, v in baseline.items()})


def mu_scan(config: ExperimentConfig, progress: ProgressCallback = None) -> ScanResult:
    """
    Func: Distortion bounds and prediction quality over the mu grid.
    Args:
        * config: reservoir ensemble, mu_grid, embedding_tau0/embedding_M, eps_mode;
                  bounds use the nodes window_filter keeps for tau0_net
        * progress: optional callback(done, total)
    Return: ScanResult with one table row per mu
    """
    logger.info("START takens_analysis.mu_scan")
    grid = [float(mu) for mu in config.mu_grid]
    spec = takens_spec(config)

    def task(res: Reservoir, values: np.ndarray, pair: SeedPair) -> List[RunRow]:
        split = prepare_sequence(values, config.train_len, config.horizon)
        out = []
        for i, mu in enumerate(grid):
            res_mu = replace(res, mu=mu)
            driven = drive(res_mu, split.train_input, washout=config.washout)
            metrics = evaluate_readout(res_mu, split, driven, None, config.nmse_mode, config.svd_rtol)
            profile = cca_profile(driven, split.train_input[driven.washout:], config.cca_max_lag)
            nodes = window_filter(profile, WindowFilterSpec(config.tau0_net, config.window_delta, config.window_M))
            bounds = None
            if nodes.size:
                bounds = training_bounds(split.train_input, driven, profile.subset(nodes), spec, config.eps_mode)
            out.append(RunRow(pair, metrics, {
                col.MU: mu,
                "grid_index": i,
                col.EPS1: bounds.eps1 if bounds else None,
                col.EPS2: bounds.eps2 if bounds else None,
            }))
        return out

    rows = run_ensemble(config, task, progress=progress)
    table = aggregate(rows, col.MU, grid)
    logger.info("END takens_analysis.mu_scan")
    return ScanResult(rows, table)
