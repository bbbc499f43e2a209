"""
Hybrid Module

Takens-inspired reservoir (TrRNN): the network evolves exactly like the
classical reservoir, but the readout sees the current state concatenated
with the state |tau_T| steps earlier ("virtual nodes"):

    y_out_{n+1} = W_out . (x_{n+1}, x_{n+1+tau_T})

Closed-loop prediction keeps the last |tau_T| states in a ring buffer.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from usecase.embedding_usecase import DelayMatrix, delay_embed
from usecase.reservoir_usecase import (
    FeatureSpec,
    ProgressCallback,
    ReadoutModel,
    Reservoir,
    RunMetrics,
    RunRow,
    SequenceSplit,
    capped_metrics,
    drive,
    prepare_sequence,
    run_ensemble,
    step_state,
    summarize,
    train_readout,
)
from usecase.signals_usecase import TimeSeries, as_values
from usecase.takens_analysis_usecase import (
    EpsilonBounds,
    ScanResult,
    WindowFilterSpec,
    aggregate,
    cca_profile,
    epsilon_bounds,
    takens_spec,
    window_filter,
)
from utils.config import ExperimentConfig
from utils.constants import Constants
from utils.exceptions import DegenerateInputError, ParameterError
from utils.logger import logger
from utils.seeds import SeedPair

defaults = Constants.Defaults
col = Constants.Columns


# ==========================================
# Domain Types
# ==========================================

@dataclass(frozen=True, eq=False)
class TrrnnSpec:
    """Delay tap tau_T (<= 0) on top of a base reservoir."""

    tau_T: int
    base: Reservoir

    def __post_init__(self):
        if int(self.tau_T) != self.tau_T or self.tau_T > 0:
            raise ParameterError(f"tau_T must be an integer <= 0 (got {self.tau_T})")

    @property
    def depth(self) -> int:
        return abs(int(self.tau_T))


@dataclass(frozen=True, eq=False)
class AugmentedStateMatrix:
    """
    Rows (x_n, x_{n+tau_T}) for the retained steps.

    history holds the last max(depth, 1) states, oldest first, and seeds the
    closed-loop ring buffer.
    """

    states: np.ndarray
    washout: int
    depth: int
    history: np.ndarray

    @property
    def rows(self) -> int:
        return self.states.shape[0]

    @property
    def final_state(self) -> np.ndarray:
        return self.history[-1]

    def current(self) -> np.ndarray:
        """The un-delayed half."""
        return self.states[:, : self.states.shape[1] // 2]

    def delayed(self) -> np.ndarray:
        """The virtual-node half, x_{n+tau_T}."""
        return self.states[:, self.states.shape[1] // 2 :]


# ==========================================
# Driving
# ==========================================

def augment(full_states: np.ndarray, washout: int, tau_T: int) -> AugmentedStateMatrix:
    """Pair every retained state with its |tau_T|-steps-earlier partner."""
    depth = abs(int(tau_T))
    T = full_states.shape[0]
    if washout < depth:
        raise ParameterError(f"washout ({washout}) must cover |tau_T| ({depth})")
    if T < washout + 1:
        raise ParameterError(f"input of length {T} is shorter than washout + 1 ({washout + 1})")
    current = full_states[washout:]
    delayed = full_states[washout - depth: T - depth]
    history = full_states[T - max(depth, 1):].copy()
    return AugmentedStateMatrix(np.hstack([current, delayed]), washout, depth, history)


def drive_augmented(
    spec: TrrnnSpec,
    input: Union[TimeSeries, np.ndarray],
    washout: int,
    x0: Optional[np.ndarray] = None,
) -> AugmentedStateMatrix:
    """
    Func: Teacher-forced driving with the delayed readout copy.
    Args:
        * spec: base reservoir and tau_T
        * input: driving samples
        * washout: leading steps dropped, must be >= |tau_T|
        * x0: initial state
    Return: AugmentedStateMatrix with 2m columns
    """
    y = as_values(input)
    if washout < spec.depth:
        raise ParameterError(f"washout ({washout}) must cover |tau_T| ({spec.depth})")
    if y.shape[0] < washout + 1:
        raise ParameterError(f"input of length {y.shape[0]} is shorter than washout + 1 ({washout + 1})")
    full = drive(spec.base, y, x0=x0, washout=0)
    return augment(full.states, washout, spec.tau_T)


# ==========================================
# Closed loop
# ==========================================

def trrnn_closed_loop_trace(
    spec: TrrnnSpec,
    model: ReadoutModel,
    history: np.ndarray,
    y_start: float,
    horizon: int,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    """
    Free-running TrRNN.

    Returns (outputs, states, delayed, divergent) where delayed[k] is the
    partner state used with states[k].
    """
    if horizon < 1:
        raise ParameterError(f"horizon must be >= 1 (got {horizon})")
    res = spec.base
    depth = spec.depth
    hist = np.atleast_2d(np.asarray(history, dtype=float))
    if hist.shape[0] < max(depth, 1) or hist.shape[1] != res.m:
        raise ParameterError(f"history needs {max(depth, 1)} states of size {res.m} (got {hist.shape})")

    ring = hist[hist.shape[0] - depth:].copy() if depth else np.empty((0, res.m))
    pos = 0
    x = hist[-1].copy()
    y = float(y_start)
    muW = res.mu * res.W
    w_in = res.alpha * res.W_in
    bias = res.bias

    outputs = np.empty(horizon)
    states = np.empty((horizon, res.m))
    delayed = np.empty((horizon, res.m))
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(horizon):
            x = step_state(res, x, y, muW, w_in, bias)
            if depth:
                partner = ring[pos].copy()
                ring[pos] = x
                pos = (pos + 1) % depth
            else:
                partner = x
            y = float(model.readout(np.concatenate([x, partner])))
            if not np.isfinite(y):
                return outputs[:k], states[:k], delayed[:k], True
            outputs[k] = y
            states[k] = x
            delayed[k] = partner
    return outputs, states, delayed, False


def trrnn_predict_closed_loop(
    spec: TrrnnSpec,
    model: ReadoutModel,
    history: np.ndarray,
    y_start: float,
    horizon: int,
    dt: float = 1.0,
) -> TimeSeries:
    """Closed-loop TrRNN forecast; metadata["divergent"] marks a truncated run."""
    outputs, _, _, divergent = trrnn_closed_loop_trace(spec, model, history, y_start, horizon)
    if divergent:
        logger.warning(f"TrRNN prediction diverged after {outputs.shape[0]} of {horizon} steps")
    return TimeSeries(outputs, dt=dt, metadata={"divergent": divergent, "tau_T": spec.tau_T})


def train_trrnn(aug: AugmentedStateMatrix, teacher: np.ndarray, tau_T: int,
                rtol: float = defaults.SVD_RTOL) -> ReadoutModel:
    """Readout over the 2m augmented columns; teacher rows aligned with aug rows."""
    return train_readout(aug.states, teacher, FeatureSpec.delayed(tau_T), rtol)


def evaluate_trrnn(
    spec: TrrnnSpec,
    split: SequenceSplit,
    aug: AugmentedStateMatrix,
    nmse_mode: str = "variance",
    rtol: float = defaults.SVD_RTOL,
) -> RunMetrics:
    """Train on the augmented states and score the closed-loop forecast."""
    model = train_trrnn(aug, split.teacher[aug.washout:], spec.tau_T, rtol)
    outputs, _, _, truncated = trrnn_closed_loop_trace(spec, model, aug.history, split.y_start,
                                                       split.target.shape[0])
    return capped_metrics(outputs, split.target, truncated, model.train_nmse, 2 * spec.base.m,
                          nmse_mode, reference_var=float(np.var(split.teacher)))


def delayed_partner_bounds(
    aug: AugmentedStateMatrix,
    train_input: np.ndarray,
    embed: DelayMatrix,
    window: WindowFilterSpec,
    lag_range: int = defaults.CCA_MAX_LAG,
    mode: str = "mean",
) -> Optional[EpsilonBounds]:
    """
    Func: Distortion bounds of the virtual nodes.
    Args:
        * aug: augmented states; row i is read out at series index aug.washout + i
        * train_input: the series that drove the network
        * embed: delay vectors of train_input
        * window: window filter applied to the CCA profile of the delayed half
        * lag_range: CCA lag grid
        * mode: eps mode
    Return: EpsilonBounds, or None when the window filter keeps no virtual node
    """
    partners = aug.delayed()
    profile = cca_profile(partners, train_input[aug.washout:], lag_range)
    nodes = window_filter(profile, window)
    if nodes.size == 0:
        return None
    return epsilon_bounds(embed, partners, profile.subset(nodes), mode, state_offset=aug.washout)


# ==========================================
# Experiments
# ==========================================

def trrnn_benchmark(config: ExperimentConfig, progress: ProgressCallback = None) -> Tuple[List[RunRow], dict]:
    """
    Func: Ensemble benchmark of the TrRNN at config.tau_T.
    Return: (rows sorted by run_id, summary dict)
    """
    logger.info("START hybrid.trrnn_benchmark")
    logger.debug(f"m={config.m}, mu={config.mu}, tau_T={config.tau_T}")

    def task(res: Reservoir, values: np.ndarray, pair: SeedPair) -> List[RunRow]:
        spec = TrrnnSpec(config.tau_T, res)
        split = prepare_sequence(values, config.train_len, config.horizon)
        aug = drive_augmented(spec, split.train_input, config.washout)
        return [RunRow(pair, evaluate_trrnn(spec, split, aug, config.nmse_mode, config.svd_rtol))]

    rows = run_ensemble(config, task, progress=progress)
    summary = summarize([row.metrics for row in rows])
    logger.info("END hybrid.trrnn_benchmark")
    return rows, summary


def delay_scan(config: ExperimentConfig, progress: ProgressCallback = None) -> ScanResult:
    """
    Func: Scan tau_T with one shared drive per (network, sequence).
    Args:
        * config: reservoir ensemble (m=350, mu=0.1 by default), tau_T_grid
        * progress: optional callback(done, total)
    Return: ScanResult with mean NMSE, divergence and eps bounds per tau_T
    """
    logger.info("START hybrid.delay_scan")
    grid = [int(t) for t in config.tau_T_grid]
    embed_spec = takens_spec(config)
    window = WindowFilterSpec(config.tau0_net, config.window_delta, config.window_M)

    def task(res: Reservoir, values: np.ndarray, pair: SeedPair) -> List[RunRow]:
        split = prepare_sequence(values, config.train_len, config.horizon)
        full = drive(res, split.train_input, washout=0)
        embed = delay_embed(split.train_input, embed_spec)
        out = []
        for i, tau in enumerate(grid):
            spec = TrrnnSpec(tau, res)
            aug = augment(full.states, config.washout, tau)
            metrics = evaluate_trrnn(spec, split, aug, config.nmse_mode, config.svd_rtol)
            eps1 = eps2 = None
            try:
                bounds = delayed_partner_bounds(aug, split.train_input, embed, window,
                                                config.cca_max_lag, config.eps_mode)
                if bounds is not None:
                    eps1, eps2 = bounds.eps1, bounds.eps2
            except (ParameterError, DegenerateInputError) as e:
                logger.warning(f"Epsilon bounds not computable for tau_T={tau}: {e}")
            out.append(RunRow(pair, metrics, {col.TAU_T: tau, "grid_index": i, col.EPS1: eps1, col.EPS2: eps2}))
        return out

    rows = run_ensemble(config, task, progress=progress)
    table = aggregate(rows, col.TAU_T, grid)
    logger.info("END hybrid.delay_scan")
    return ScanResult(rows, table)
