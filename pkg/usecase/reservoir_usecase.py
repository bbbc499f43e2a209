"""
Reservoir Module

The classical random recurrent network (rRNN):

    x_{n+1} = f(mu * W x_n + alpha * W_in y_{n+1} + W_off * b)

construction with spectral-radius normalisation, teacher-forced driving,
SVD pseudo-inverse readout training, closed-loop (free-running) prediction,
NMSE metrics and the seeded ensemble benchmark.

Alignment: the network is driven with y_0..y_{T-1} and trained against
y_1..y_T; closed-loop prediction starts from the last driven state with
y_start = y_T, so the first output forecasts y_{T+1}.
"""

import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg

from usecase.signals_usecase import MGParams, TimeSeries, as_values, gen_mackey_glass
from utils.config import ExperimentConfig
from utils.constants import Constants
from utils.exceptions import ConstructionError, DegenerateInputError, ParameterError
from utils.logger import logger
from utils.seeds import SeedPair, seed_schedule

defaults = Constants.Defaults
col = Constants.Columns

ACTIVATIONS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "tanh": np.tanh,
}

ProgressCallback = Optional[Callable[[int, int], None]]


# ==========================================
# Domain Types
# ==========================================

@dataclass(frozen=True, eq=False)
class Reservoir:
    """Immutable network parameters; mu is applied at run time."""

    m: int
    W: np.ndarray
    W_in: np.ndarray
    W_off: np.ndarray
    mu: float
    alpha: float
    b: float
    seed: int
    activation: str = "tanh"

    @property
    def f(self) -> Callable[[np.ndarray], np.ndarray]:
        return ACTIVATIONS[self.activation]

    @property
    def bias(self) -> np.ndarray:
        return self.W_off * self.b


@dataclass(frozen=True, eq=False)
class StateMatrix:
    """Retained states (T x m) after the washout, plus the last state for continuation."""

    states: np.ndarray
    washout: int
    final_state: np.ndarray

    @property
    def rows(self) -> int:
        return self.states.shape[0]


@dataclass(frozen=True)
class FeatureSpec:
    """
    Which columns the readout sees.

    kind:
        all      every node
        mask     node_index columns (with multiplicity)
        delayed  current states concatenated with tau_T-delayed states (2m columns)
    """

    kind: str = "all"
    node_index: Tuple[int, ...] = ()
    tau_T: int = 0

    def __post_init__(self):
        if self.kind not in ("all", "mask", "delayed"):
            raise ParameterError(f"unknown feature kind '{self.kind}'")
        if self.kind == "mask" and len(self.node_index) == 0:
            raise ParameterError("mask feature spec needs at least one node")

    @classmethod
    def mask(cls, node_index: Sequence[int]) -> "FeatureSpec":
        return cls("mask", tuple(int(i) for i in node_index))

    @classmethod
    def delayed(cls, tau_T: int) -> "FeatureSpec":
        return cls("delayed", (), int(tau_T))

    def select(self, states: np.ndarray) -> np.ndarray:
        """Feature columns of a (T x m) or (m,) state array."""
        if self.kind == "mask":
            return states[..., list(self.node_index)]
        return states

    def feature_count(self, m: int) -> int:
        if self.kind == "mask":
            return len(self.node_index)
        if self.kind == "delayed":
            return 2 * m
        return m


@dataclass(frozen=True, eq=False)
class ReadoutModel:
    """Trained output weights and the feature spec they apply to."""

    W_out: np.ndarray
    feature_spec: FeatureSpec
    train_nmse: float

    def readout(self, features: np.ndarray) -> np.ndarray:
        return features @ self.W_out


@dataclass(frozen=True, eq=False)
class SequenceSplit:
    """Teacher-forcing split of one mean-subtracted sequence."""

    train_input: np.ndarray
    teacher: np.ndarray
    target: np.ndarray
    y_start: float
    mean: float


@dataclass
class RunMetrics:
    """Outcome of one closed-loop evaluation."""

    nmse: float
    divergent: bool
    blown_up: bool
    train_nmse: float
    n_features: int
    prediction: Optional[np.ndarray] = None


@dataclass
class RunRow:
    """One (network, sequence) run inside a sweep."""

    pair: SeedPair
    metrics: RunMetrics
    extras: Dict[str, Any] = field(default_factory=dict)


# ==========================================
# Construction and driving
# ==========================================

def build_reservoir(
    m: int,
    mu: float,
    alpha: float,
    b: float,
    seed: int,
    weight_range: float = defaults.WEIGHT_RANGE,
    activation: str = "tanh",
) -> Reservoir:
    """
    Func: Draw a fully connected random network and normalise its spectral radius to 1.
    Args:
        * m: node count
        * mu, alpha, b: bifurcation parameter, input gain, phase offset
        * seed: construction seed (W, then W_in, then W_off)
        * weight_range: entries are uniform on [-weight_range, weight_range]
    Return: Reservoir
    """
    if m < 1:
        raise ParameterError(f"m must be >= 1 (got {m})")
    if activation not in ACTIVATIONS:
        raise ParameterError(f"unknown activation '{activation}'")

    rng = np.random.default_rng(seed)
    W = rng.uniform(-weight_range, weight_range, size=(m, m))
    W_in = rng.uniform(-weight_range, weight_range, size=m)
    W_off = rng.uniform(-weight_range, weight_range, size=m)

    try:
        radius = float(np.max(np.abs(scipy.linalg.eigvals(W))))
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError) as e:
        raise ConstructionError(f"eigenvalue computation failed for m={m}, seed={seed}: {e}") from e
    if not np.isfinite(radius) or radius == 0.0:
        raise ConstructionError(f"cannot normalise W with spectral radius {radius}")

    return Reservoir(m, W / radius, W_in, W_off, float(mu), float(alpha), float(b), int(seed), activation)


def step_state(res: Reservoir, x: np.ndarray, y: float, muW: np.ndarray, w_in: np.ndarray,
               bias: np.ndarray) -> np.ndarray:
    """One network update; shared by driving and closed-loop prediction."""
    return res.f(muW @ x + w_in * y + bias)


def drive(
    res: Reservoir,
    input: Union[TimeSeries, np.ndarray],
    x0: Optional[np.ndarray] = None,
    washout: int = 0,
) -> StateMatrix:
    """
    Func: Teacher-forced driving.
    Args:
        * res: network
        * input: y values, one state per input sample
        * x0: initial state (zero vector by default)
        * washout: leading states dropped from the returned matrix
    Return: StateMatrix with len(input) - washout rows
    """
    y = as_values(input)
    if not 0 <= washout < y.shape[0]:
        raise ParameterError(f"washout must satisfy 0 <= washout < len(input) (got {washout}, {y.shape[0]})")

    x = np.zeros(res.m) if x0 is None else np.asarray(x0, dtype=float).copy()
    muW = res.mu * res.W
    w_in = res.alpha * res.W_in
    bias = res.bias

    states = np.empty((y.shape[0], res.m))
    for n in range(y.shape[0]):
        x = step_state(res, x, y[n], muW, w_in, bias)
        states[n] = x
    return StateMatrix(states[washout:], washout, x.copy())


# ==========================================
# Readout
# ==========================================

def pinv_solve(X: np.ndarray, y: np.ndarray, rtol: float = defaults.SVD_RTOL) -> np.ndarray:
    """Least-squares solution through the SVD pseudo-inverse with a relative cutoff."""
    if X.shape[1] == 0:
        return np.zeros(0)
    U, s, Vt = scipy.linalg.svd(X, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(X.shape[1])
    keep = s > rtol * s[0]
    coeffs = (U[:, keep].T @ y) / s[keep]
    return Vt[keep].T @ coeffs


def train_readout(
    states: Union[StateMatrix, np.ndarray],
    teacher: Union[TimeSeries, np.ndarray],
    feature_spec: Optional[FeatureSpec] = None,
    rtol: float = defaults.SVD_RTOL,
) -> ReadoutModel:
    """
    Func: Fit W_out minimising ||X W_out - teacher|| by SVD pseudo-inverse.
    Args:
        * states: retained states (rows aligned with teacher)
        * teacher: target values, teacher[n] = next input after state n
        * feature_spec: columns used by the readout
        * rtol: relative singular-value cutoff
    Return: ReadoutModel (train_nmse is nan for a constant teacher)
    """
    S = states.states if isinstance(states, StateMatrix) else np.asarray(states, dtype=float)
    y = as_values(teacher)
    if S.shape[0] != y.shape[0]:
        raise ParameterError(f"states have {S.shape[0]} rows but teacher has {y.shape[0]} samples")

    spec = feature_spec or FeatureSpec()
    X = spec.select(S)
    if X.shape[1] >= X.shape[0]:
        logger.warning(f"Readout is rank deficient: {X.shape[1]} features for {X.shape[0]} rows")

    W_out = pinv_solve(X, y, rtol)
    fitted = X @ W_out
    train_nmse = nmse(fitted, y) if np.var(y) > 0 else float("nan")
    return ReadoutModel(W_out, spec, train_nmse)


# ==========================================
# Closed-loop prediction
# ==========================================

def closed_loop_trace(
    res: Reservoir,
    model: ReadoutModel,
    x_start: np.ndarray,
    y_start: float,
    horizon: int,
) -> Tuple[np.ndarray, np.ndarray, bool]:
    """
    Free-running loop returning (outputs, states, divergent).
    states[k] is the state that produced outputs[k]; the run stops at the
    first non-finite output.
    """
    if horizon < 1:
        raise ParameterError(f"horizon must be >= 1 (got {horizon})")
    if model.feature_spec.kind == "delayed":
        raise ParameterError("delayed features need the hybrid closed loop")

    muW = res.mu * res.W
    w_in = res.alpha * res.W_in
    bias = res.bias
    x = np.asarray(x_start, dtype=float).copy()
    y = float(y_start)

    outputs = np.empty(horizon)
    states = np.empty((horizon, res.m))
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(horizon):
            x = step_state(res, x, y, muW, w_in, bias)
            y = float(model.readout(model.feature_spec.select(x)))
            if not np.isfinite(y):
                return outputs[:k], states[:k], True
            outputs[k] = y
            states[k] = x
    return outputs, states, False


def predict_closed_loop(
    res: Reservoir,
    model: ReadoutModel,
    x_start: np.ndarray,
    y_start: float,
    horizon: int,
    dt: float = 1.0,
) -> TimeSeries:
    """Closed-loop forecast; metadata["divergent"] marks a truncated run."""
    outputs, _, divergent = closed_loop_trace(res, model, x_start, y_start, horizon)
    if divergent:
        logger.warning(f"Closed-loop prediction diverged after {outputs.shape[0]} of {horizon} steps")
    return TimeSeries(outputs, dt=dt, metadata={"divergent": divergent})


# ==========================================
# Metrics
# ==========================================

def nmse(
    prediction: Union[TimeSeries, np.ndarray],
    target: Union[TimeSeries, np.ndarray],
    mode: str = "variance",
) -> float:
    """
    Mean squared error normalised by the target variance (or standard
    deviation in "stdev" mode).
    """
    p = as_values(prediction)
    t = as_values(target)
    if p.shape != t.shape or t.shape[0] < 2:
        raise ParameterError(f"nmse needs equal lengths >= 2 (got {p.shape[0]}, {t.shape[0]})")
    var = float(np.var(t))
    if var == 0.0:
        raise DegenerateInputError("nmse target is constant")
    mse = float(np.mean((p - t) ** 2))
    if mode == "variance":
        return mse / var
    if mode == "stdev":
        return mse / np.sqrt(var)
    raise ParameterError(f"unknown nmse mode '{mode}'")


def capped_metrics(
    prediction: np.ndarray,
    target: np.ndarray,
    truncated: bool,
    train_nmse: float,
    n_features: int,
    mode: str = "variance",
    cap: float = defaults.NMSE_CAP,
    reference_var: Optional[float] = None,
) -> RunMetrics:
    """
    NMSE with the divergence flags: divergent = NMSE > 1, blown_up = non-finite or > cap.
    A single-sample target is scored against reference_var (the teacher variance).
    """
    if truncated or prediction.shape[0] < target.shape[0]:
        score, blown_up = cap, True
    else:
        with np.errstate(over="ignore", invalid="ignore"):
            if target.shape[0] >= 2:
                score = nmse(prediction, target, mode)
            else:
                if not reference_var:
                    raise DegenerateInputError("single-sample NMSE needs a non-zero reference variance")
                norm = reference_var if mode == "variance" else np.sqrt(reference_var)
                score = float(np.mean((prediction - target) ** 2)) / norm
        blown_up = not np.isfinite(score) or score > cap
        if blown_up:
            score = cap
    return RunMetrics(float(score), bool(score > 1.0), bool(blown_up), float(train_nmse), n_features, prediction)


# ==========================================
# Sequences and single runs
# ==========================================

def prepare_sequence(values: Union[TimeSeries, np.ndarray], train_len: int, horizon: int) -> SequenceSplit:
    """
    Func: Split a sequence for teacher forcing and closed-loop evaluation.
    Args:
        * values: raw sequence of at least train_len + 1 + horizon samples
        * train_len: number of driving inputs T
        * horizon: number of forecast samples
    Return: SequenceSplit with the training-window mean removed everywhere
    """
    y = as_values(values)
    needed = train_len + 1 + horizon
    if y.shape[0] < needed:
        raise ParameterError(f"sequence needs {needed} samples (got {y.shape[0]})")
    mean = float(np.mean(y[:train_len + 1]))
    z = y - mean
    return SequenceSplit(
        train_input=z[:train_len],
        teacher=z[1:train_len + 1],
        target=z[train_len + 1:needed],
        y_start=float(z[train_len]),
        mean=mean,
    )


def evaluate_readout(
    res: Reservoir,
    split: SequenceSplit,
    driven: StateMatrix,
    feature_spec: Optional[FeatureSpec] = None,
    nmse_mode: str = "variance",
    rtol: float = defaults.SVD_RTOL,
) -> RunMetrics:
    """Train on the driven states and score the closed-loop forecast."""
    spec = feature_spec or FeatureSpec()
    teacher = split.teacher[driven.washout:]
    model = train_readout(driven, teacher, spec, rtol)
    outputs, _, truncated = closed_loop_trace(res, model, driven.final_state, split.y_start,
                                              split.target.shape[0])
    return capped_metrics(outputs, split.target, truncated, model.train_nmse,
                          spec.feature_count(res.m), nmse_mode,
                          reference_var=float(np.var(split.teacher)))


# ==========================================
# Ensembles
# ==========================================

def mg_params_from(config: ExperimentConfig) -> MGParams:
    return MGParams(**config.mg)


def benchmark_sequences(config: ExperimentConfig, pairs: Sequence[SeedPair]) -> Dict[int, np.ndarray]:
    """One Mackey-Glass sequence per sequence id, seeded by the schedule."""
    params = mg_params_from(config)
    n_out = config.train_len + 1 + config.horizon
    seqs = {}
    for pair in pairs:
        if pair.sequence_id not in seqs:
            seqs[pair.sequence_id] = gen_mackey_glass(params, n_out, "random", pair.sequence_seed).values
    return seqs


def run_ensemble(
    config: ExperimentConfig,
    task: Callable[[Reservoir, np.ndarray, SeedPair], List[RunRow]],
    reservoir_factory: Optional[Callable[[SeedPair], Reservoir]] = None,
    progress: ProgressCallback = None,
) -> List[RunRow]:
    """
    Run `task` for every (network, sequence) pair of the seed schedule.

    Networks and sequences are built once and shared read-only across worker
    threads; rows are returned sorted by run_id so the output does not
    depend on the worker count.
    """
    pairs = seed_schedule(config.seed, config.ensemble_networks, config.ensemble_sequences)
    sequences = benchmark_sequences(config, pairs)

    factory = reservoir_factory or (
        lambda pair: build_reservoir(config.m, config.mu, config.alpha, config.b,
                                     pair.network_seed, config.weight_range)
    )
    networks: Dict[int, Reservoir] = {}
    net_lock = threading.Lock()

    def network_for(pair: SeedPair) -> Reservoir:
        with net_lock:
            if pair.network_id not in networks:
                networks[pair.network_id] = factory(pair)
            return networks[pair.network_id]

    def one(pair: SeedPair) -> List[RunRow]:
        return task(network_for(pair), sequences[pair.sequence_id], pair)

    rows: List[RunRow] = []
    total = len(pairs)
    workers = min(config.resolved_workers(), total)
    logger.debug(f"Ensemble: {total} runs on {workers} workers")
    if workers <= 1:
        for done, pair in enumerate(pairs, start=1):
            rows.extend(one(pair))
            if progress:
                progress(done, total)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(one, pair) for pair in pairs]
            for done, future in enumerate(as_completed(futures), start=1):
                rows.extend(future.result())
                if progress:
                    progress(done, total)

    rows.sort(key=lambda row: (row.pair.run_id, row.extras.get("grid_index", 0)))
    return rows


def summarize(metrics: Sequence[RunMetrics]) -> Dict[str, float]:
    """Mean / stdev NMSE (capped), divergence percentage, blown-up count, mean feature count."""
    scores = np.array([m.nmse for m in metrics], dtype=float)
    return {
        col.MEAN_NMSE: float(np.mean(scores)),
        col.STD_NMSE: float(np.std(scores)),
        col.DIVERGENCE_PCT: float(100.0 * np.mean([m.divergent for m in metrics])),
        col.BLOWN_UP: int(sum(m.blown_up for m in metrics)),
        col.MEAN_NODES: float(np.mean([m.n_features for m in metrics])),
    }


def ensemble_benchmark(config: ExperimentConfig, progress: ProgressCallback = None) -> Tuple[List[RunRow], Dict[str, float]]:
    """
    Func: Train/predict every (network, sequence) pair of the ensemble.
    Args:
        * config: m, mu, alpha, b, train_len, washout, horizon, ensemble sizes, seed
        * progress: optional callback(done, total)
    Return: (rows sorted by run_id, summary dict)
    """
    logger.info("START reservoir.ensemble_benchmark")
    logger.debug(f"m={config.m}, mu={config.mu}, ensemble={config.ensemble_networks}x{config.ensemble_sequences}")

    def task(res: Reservoir, values: np.ndarray, pair: SeedPair) -> List[RunRow]:
        split = prepare_sequence(values, config.train_len, config.horizon)
        driven = drive(res, split.train_input, washout=config.washout)
        metrics = evaluate_readout(res, split, driven, None, config.nmse_mode, config.svd_rtol)
        if metrics.divergent:
            logger.warning(f"Run {pair.run_id} divergent (NMSE {metrics.nmse:.3g})")
        return [RunRow(pair, metrics)]

    rows = run_ensemble(config, task, progress=progress)
    summary = summarize([row.metrics for row in rows])
    logger.info("END reservoir.ensemble_benchmark")
    return rows, summary
