"""
Signals Module

Generates and preconditions the benchmark signals:
    * the discrete-time Mackey-Glass (MG) map, iterated at step delta and decimated,
    * the stochastic FitzHugh-Nagumo (FHN) neuron, integrated by Euler-Maruyama,
    * mean-subtraction preprocessing.

Every generator is a pure function of (params, seed).
TimeSeries objects are serialized as a single-column CSV (header `value`)
plus a sidecar JSON with {dt, origin_index, seed, params}.
"""

import copy
import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Sequence, Tuple, Union

import numpy as np

from utils.constants import Constants
from utils.exceptions import GenerationError, ParameterError
from utils.files import write_csv_atomic, write_json_atomic
from utils.logger import logger

defaults = Constants.Defaults
col = Constants.Columns


# ==========================================
# Domain Types
# ==========================================

@dataclass(frozen=True, eq=False)
class TimeSeries:
    """
    Uniformly sampled scalar sequence.

    Attributes:
        values: 1D float64 array
        dt: sample interval in model time units
        origin_index: integer offset of the first sample
        metadata: provenance (generator, seed, params, flags)
    """

    values: np.ndarray
    dt: float = 1.0
    origin_index: int = 0
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        object.__setattr__(self, "values", values)
        if not self.dt > 0:
            raise ParameterError(f"dt must be > 0 (got {self.dt})")
        if not np.all(np.isfinite(values)):
            raise ParameterError("TimeSeries values must be finite")

    def __len__(self) -> int:
        return self.values.shape[0]

    def with_values(self, values: np.ndarray, **metadata) -> "TimeSeries":
        """Copy with new values (same dt/origin), merging extra metadata."""
        return TimeSeries(values, self.dt, self.origin_index, {**self.metadata, **metadata})

    def segment(self, start: int, stop: int) -> "TimeSeries":
        """Slice [start, stop) keeping the absolute origin."""
        return TimeSeries(self.values[start:stop], self.dt, self.origin_index + start, dict(self.metadata))


@dataclass(frozen=True)
class MGParams:
    """Parameters of the discrete-time Mackey-Glass map."""

    theta: float = defaults.MG_THETA
    nu: float = defaults.MG_NU
    psi: float = defaults.MG_PSI
    tau_m: float = defaults.MG_TAU_M
    delta: float = defaults.MG_DELTA
    subsample: int = defaults.MG_SUBSAMPLE
    transient: int = defaults.MG_TRANSIENT

    def __post_init__(self):
        if not self.delta > 0:
            raise ParameterError(f"MG delta must be > 0 (got {self.delta})")
        if int(self.subsample) != self.subsample or self.subsample < 1:
            raise ParameterError(f"MG subsample must be a positive integer (got {self.subsample})")
        if self.transient < 0:
            raise ParameterError(f"MG transient must be >= 0 (got {self.transient})")

    @property
    def history_length(self) -> int:
        """tau_m / delta, the delay in iterations; must be a positive integer."""
        ratio = self.tau_m / self.delta
        lag = int(round(ratio))
        if lag < 1 or not math.isclose(ratio, lag, rel_tol=0.0, abs_tol=1e-9):
            raise ParameterError(
                f"tau_m/delta must be a positive integer (tau_m={self.tau_m}, delta={self.delta})"
            )
        return lag


@dataclass(frozen=True)
class FHNParams:
    """
    Parameters of the stochastic FitzHugh-Nagumo neuron.

    The default noise_sigma is 0.02 * sqrt(dt): with noise scaled by 1/eps the
    per-step voltage kick has standard deviation 0.02 * dt / eps (0.004 at the
    default dt and eps).
    """

    epsilon: float = defaults.FHN_EPSILON
    g: float = defaults.FHN_G
    D: float = defaults.FHN_D
    H: float = defaults.FHN_H
    I: float = defaults.FHN_I  # noqa: E741
    noise_sigma: float = defaults.FHN_NOISE_SIGMA
    dt: float = defaults.FHN_DT
    noise_scaled_by_epsilon: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ParameterError(f"FHN epsilon must be > 0 (got {self.epsilon})")
        if not self.dt > 0:
            raise ParameterError(f"FHN dt must be > 0 (got {self.dt})")
        if self.noise_sigma < 0:
            raise ParameterError(f"FHN noise_sigma must be >= 0 (got {self.noise_sigma})")


@dataclass(frozen=True)
class FHNState:
    """Voltage and recovery variable."""

    v: float
    w: float

    def __post_init__(self):
        if not (math.isfinite(self.v) and math.isfinite(self.w)):
            raise ParameterError(f"FHN state must be finite (got v={self.v}, w={self.w})")


# ==========================================
# Mackey-Glass
# ==========================================

def gen_mackey_glass(
    params: MGParams,
    n_out: int,
    history: Union[str, Sequence[float]] = "random",
    seed: int = 0,
    history_value: float = 1.0,
) -> TimeSeries:
    """
    Iterate the discrete MG map and emit decimated samples.

        y_{n+1} = y_n + delta * (theta * y_{n-L} / (1 + y_{n-L}^nu) - psi * y_n),   L = tau_m / delta

    Decimated sample k is iterate k*subsample counted from the last history
    value; the first `params.transient` decimated samples are discarded.

    Args:
        params: map parameters
        n_out: number of emitted samples (>= 1)
        history: "random" (seeded uniform in [0.1, 1.3]), "constant"
                 (filled with history_value) or L + 1 explicit values
        seed: RNG seed for the random history
        history_value: fill value for the constant history

    Returns:
        TimeSeries with dt = delta * subsample

    Raises:
        ParameterError: non-integer tau_m/delta, bad history, n_out < 1
        GenerationError: overflow / NaN, naming the iteration index
    """
    lag = params.history_length
    if n_out < 1:
        raise ParameterError(f"n_out must be >= 1 (got {n_out})")

    if isinstance(history, str):
        if history == "random":
            rng = np.random.default_rng(seed)
            hist = rng.uniform(defaults.MG_HISTORY_LOW, defaults.MG_HISTORY_HIGH, lag + 1)
        elif history == "constant":
            hist = np.full(lag + 1, float(history_value))
        else:
            raise ParameterError(f"unknown history mode '{history}'")
        history_mode = history
    else:
        hist = np.asarray(history, dtype=float).reshape(-1)
        if hist.shape[0] != lag + 1:
            raise ParameterError(f"history needs {lag + 1} values (got {hist.shape[0]})")
        history_mode = "explicit"

    subsample = int(params.subsample)
    total_samples = params.transient + n_out
    n_iter = (total_samples - 1) * subsample

    theta, nu, psi, delta = params.theta, params.nu, params.psi, params.delta
    buf = hist.tolist() + [0.0] * n_iter
    for i in range(lag, lag + n_iter):
        y = buf[i]
        y_lag = buf[i - lag]
        try:
            nxt = y + delta * (theta * y_lag / (1.0 + math.pow(y_lag, nu)) - psi * y)
        except (OverflowError, ValueError, ZeroDivisionError) as e:
            raise GenerationError(f"Mackey-Glass iteration failed at step {i - lag + 1}: {e}",
                                  step=i - lag + 1) from e
        if not math.isfinite(nxt):
            raise GenerationError(f"Mackey-Glass iteration produced {nxt} at step {i - lag + 1}",
                                  step=i - lag + 1)
        buf[i + 1] = nxt

    samples = np.asarray(buf[lag::subsample], dtype=float)[params.transient:]
    return TimeSeries(
        samples,
        dt=delta * subsample,
        origin_index=0,
        metadata={
            "generator": "mackey-glass",
            "seed": seed,
            "history": history_mode,
            "params": asdict(params),
        },
    )


# ==========================================
# FitzHugh-Nagumo
# ==========================================

class FhnIntegrator:
    """
    Stateful Euler-Maruyama stepper for the FHN neuron.

        v <- v + (dt/eps) [v (v - g)(1 - v) - w + I + I_ext] + s * sqrt(dt) * N(0, 1)
        w <- w + dt (v - D w - H)

    with s = noise_sigma / eps (or noise_sigma when noise_scaled_by_epsilon is
    False). Gaussian draws come from a seeded numpy Generator in fixed-size
    blocks, so gen_fhn and controlled runs consume the identical stream.
    """

    def __init__(
        self,
        params: FHNParams,
        initial: FHNState,
        seed: int,
        divergence_bound: float = defaults.FHN_DIVERGENCE_BOUND,
        block: int = defaults.FHN_NOISE_BLOCK,
    ):
        self.params = params
        self.v = float(initial.v)
        self.w = float(initial.w)
        self.steps = 0
        self.divergence_bound = float(divergence_bound)
        self._rng = np.random.default_rng(seed)
        self._block = int(block)
        self._noise: list = []
        self._pos = 0
        self._drift_scale = params.dt / params.epsilon
        noise_gain = params.noise_sigma / params.epsilon if params.noise_scaled_by_epsilon else params.noise_sigma
        self.noise_scale = noise_gain * math.sqrt(params.dt)

    @property
    def state(self) -> FHNState:
        return FHNState(self.v, self.w)

    def next_normal(self) -> float:
        if self._pos >= len(self._noise):
            self._noise = self._rng.standard_normal(self._block).tolist()
            self._pos = 0
        z = self._noise[self._pos]
        self._pos += 1
        return z

    def step(self, extra_current: float = 0.0) -> float:
        """Advance one step with an additive drive; returns the new voltage."""
        p = self.params
        v, w = self.v, self.w
        z = self.next_normal()
        v_new = v + self._drift_scale * (v * (v - p.g) * (1.0 - v) - w + p.I + extra_current) \
            + self.noise_scale * z
        w_new = w + p.dt * (v - p.D * w - p.H)
        self.steps += 1
        if not abs(v_new) <= self.divergence_bound:
            raise GenerationError(
                f"FHN voltage diverged (|v|={abs(v_new)}) at step {self.steps}", step=self.steps
            )
        self.v, self.w = v_new, w_new
        return v_new

    def copy(self) -> "FhnIntegrator":
        """Independent copy, including the RNG position."""
        return copy.deepcopy(self)


def gen_fhn(
    params: FHNParams,
    n_steps: int,
    initial: FHNState,
    seed: int,
    divergence_bound: float = defaults.FHN_DIVERGENCE_BOUND,
) -> Tuple[TimeSeries, TimeSeries]:
    """
    Func: Integrate the FHN neuron for n_steps samples.
    Args:
        * params: neuron parameters
        * n_steps: number of samples (sample k = state after k steps)
        * initial: initial (v, w)
        * seed: noise seed
        * divergence_bound: |v| limit before a GenerationError
    Return: (v, w) TimeSeries sharing dt = params.dt
    """
    if n_steps < 1:
        raise ParameterError(f"n_steps must be >= 1 (got {n_steps})")

    integrator = FhnIntegrator(params, initial, seed, divergence_bound)
    v = np.empty(n_steps)
    w = np.empty(n_steps)
    v[0], w[0] = integrator.v, integrator.w
    for k in range(1, n_steps):
        integrator.step()
        v[k] = integrator.v
        w[k] = integrator.w

    meta = {"generator": "fitzhugh-nagumo", "seed": seed, "params": asdict(params)}
    return (
        TimeSeries(v, dt=params.dt, metadata={**meta, "variable": "v"}),
        TimeSeries(w, dt=params.dt, metadata={**meta, "variable": "w"}),
    )


def fhn_noise_increments(params: FHNParams, n_steps: int, seed: int) -> np.ndarray:
    """Raw voltage noise increments (s * sqrt(dt) * N(0,1)) the integrator would apply."""
    integrator = FhnIntegrator(params, FHNState(0.0, 0.0), seed)
    return np.array([integrator.noise_scale * integrator.next_normal() for _ in range(n_steps)])


def fhn_equilibrium(params: FHNParams) -> FHNState:
    """
    Rest equilibrium: lowest real root of
        v (v - g)(1 - v) - w + I = 0,   v - D w - H = 0.
    """
    if params.D == 0:
        raise ParameterError("FHN equilibrium needs D != 0")
    g, D, H, I = params.g, params.D, params.H, params.I
    roots = np.roots([1.0, -(1.0 + g), g + 1.0 / D, -(H / D + I)])
    real = np.sort(roots[np.abs(roots.imag) < 1e-9].real)
    v = float(real[0])
    # polish with Newton on f(v) = v(v-g)(1-v) - (v-H)/D + I
    for _ in range(3):
        f = v * (v - g) * (1.0 - v) - (v - H) / D + I
        df = -3.0 * v * v + 2.0 * (1.0 + g) * v - g - 1.0 / D
        if df == 0:
            break
        v -= f / df
    return FHNState(v, (v - H) / D)


# ==========================================
# Preprocessing
# ==========================================

def mean_subtract(series: TimeSeries) -> Tuple[TimeSeries, float]:
    """
    Func: Remove the sample mean.
    Return: (zero-mean series, removed mean)
    """
    if len(series) == 0:
        raise ParameterError("mean_subtract needs a non-empty series")
    mean = float(np.mean(series.values))
    return series.with_values(series.values - mean, removed_mean=mean), mean


# ==========================================
# Serialization
# ==========================================

def save_series(series: TimeSeries, path: Union[Path, str]) -> Tuple[Path, Path]:
    """Write `<path>` (CSV, header `value`) and `<path>.json` metadata."""
    path = Path(path)
    meta_path = path.with_suffix(".json")
    write_csv_atomic(path, [col.VALUE], ([v] for v in series.values))
    write_json_atomic(meta_path, {
        "dt": series.dt,
        "origin_index": series.origin_index,
        "seed": series.metadata.get("seed"),
        "params": series.metadata.get("params"),
    })
    logger.debug(f"Series written: {path} ({len(series)} samples)")
    return path, meta_path


def load_series(path: Union[Path, str]) -> TimeSeries:
    """Inverse of save_series."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != [col.VALUE]:
            raise ParameterError(f"{path}: expected single column '{col.VALUE}'")
        values = [float(row[col.VALUE]) for row in reader]

    meta: Dict[str, Any] = {}
    meta_path = path.with_suffix(".json")
    if meta_path.exists():
        with open(meta_path, encoding="utf-8") as f:
            meta = json.load(f)
    return TimeSeries(
        np.asarray(values),
        dt=float(meta.get("dt", 1.0)),
        origin_index=int(meta.get("origin_index", 0)),
        metadata={"seed": meta.get("seed"), "params": meta.get("params")},
    )


def as_values(series: Union[TimeSeries, np.ndarray, Sequence[float]]) -> np.ndarray:
    """Accept a TimeSeries or array-like and return the float64 values."""
    if isinstance(series, TimeSeries):
        return series.values
    return np.asarray(series, dtype=float).reshape(-1)
