"""
Control Module

Stabilises the stochastic FitzHugh-Nagumo neuron with a predicted sensor:
    * spike / inter-spike-interval (ISI) extraction,
    * return-map fit I_{n+1} = a I_n + c locating the unstable fixed point I*,
    * demand pacing: a current pulse is applied to the neuron whenever the time
      elapsed since the last predicted spike (or the last pulse) exceeds a
      fixed fraction of I*,
    * the node-count sweep comparing the classical and the delayed-readout network.

The predicted voltage comes from an oracle (the true voltage) or from a
reservoir trained on the uncontrolled voltage, re-synchronised to the
measured voltage every `resync_every` steps (0 = pure free run).
"""

from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg

from usecase.hybrid_usecase import TrrnnSpec, drive_augmented, train_trrnn
from usecase.reservoir_usecase import (
    ProgressCallback,
    ReadoutModel,
    Reservoir,
    build_reservoir,
    drive,
    step_state,
    train_readout,
)
from usecase.signals_usecase import FHNParams, FHNState, FhnIntegrator, TimeSeries, as_values, fhn_equilibrium
from utils.config import ExperimentConfig
from utils.constants import Constants
from utils.exceptions import NoFixedPointError, ParameterError
from utils.logger import logger
from utils.seeds import derive_seed

defaults = Constants.Defaults
col = Constants.Columns

# refractory used to find spikes in the training trace before I* is known
PROVISIONAL_REFRACTORY = 100
MIN_RETURN_MAP_ISIS = 10


# ==========================================
# Domain Types
# ==========================================

@dataclass(frozen=True, eq=False)
class SpikeTrain:
    """Increasing spike sample indices and the ISIs between them."""

    spike_indices: np.ndarray
    isi: np.ndarray

    @classmethod
    def from_indices(cls, indices: Sequence[int]) -> "SpikeTrain":
        idx = np.asarray(indices, dtype=np.int64)
        return cls(idx, np.diff(idx))

    def __len__(self) -> int:
        return self.spike_indices.shape[0]

    def mean_isi(self) -> float:
        return float(np.mean(self.isi)) if self.isi.size else float("nan")

    def rows(self) -> List[Tuple[int, Optional[int]]]:
        """(spike_index, isi to the next spike) rows; the last spike has no ISI."""
        return [(int(s), int(self.isi[k]) if k < self.isi.size else None)
                for k, s in enumerate(self.spike_indices)]


@dataclass(frozen=True)
class ControllerSpec:
    """
    Demand-pacing parameters; refractory/target_isi of None are derived from the fit.

    A pulse fires once the time since the last predicted spike (or pulse)
    exceeds pacing_fraction * target_isi.
    """

    v_threshold: float = defaults.V_THRESHOLD
    refractory: Optional[int] = None
    target_isi: Optional[float] = None
    pulse_amplitude: float = defaults.PULSE_AMPLITUDE
    pulse_width: int = defaults.PULSE_WIDTH
    fit_window: int = defaults.FIT_WINDOW
    pacing_fraction: float = defaults.PACING_FRACTION

    def __post_init__(self):
        if self.pulse_width < 1:
            raise ParameterError(f"pulse_width must be >= 1 (got {self.pulse_width})")
        if not 0 < self.pacing_fraction <= 1:
            raise ParameterError(f"pacing_fraction must lie in (0, 1] (got {self.pacing_fraction})")
        if self.refractory is not None and self.refractory < 0:
            raise ParameterError(f"refractory must be >= 0 (got {self.refractory})")
        if (self.target_isi is not None and self.refractory is not None
                and not self.target_isi > self.refractory):
            raise ParameterError(
                f"target_isi ({self.target_isi}) must exceed refractory ({self.refractory})"
            )


@dataclass(frozen=True)
class PredictorSpec:
    """Which sensor replaces the measured voltage, and how a network predictor is built."""

    kind: str = "trrnn"
    m: int = 12
    mu: float = defaults.CONTROL_MU_TRRNN
    alpha: float = defaults.ALPHA
    b: float = defaults.B
    seed: int = 0
    tau_T: int = defaults.CONTROL_TAU_T
    washout: int = defaults.WASHOUT
    svd_rtol: float = defaults.SVD_RTOL

    def __post_init__(self):
        if self.kind not in ("oracle", "rrnn", "trrnn"):
            raise ParameterError(f"unknown predictor kind '{self.kind}'")


@dataclass
class ControlRunReport:
    """Outcome of one controlled run (indices relative to the start of control)."""

    controlled_isi: SpikeTrain
    uncontrolled_isi: SpikeTrain
    normalized_mean_isi: float
    isi_cv: float
    nodes: int
    stabilized: bool
    architecture: str
    target_isi: float
    refractory: int
    pulses: int
    diverged: bool = False
    controlled_mean_isi: float = float("nan")
    uncontrolled_mean_isi: float = float("nan")
    return_map_slope: Optional[float] = None
    uncontrolled_isi_cv: float = float("nan")

    def to_dict(self) -> Dict[str, Any]:
        return {
            col.ARCHITECTURE: self.architecture,
            col.NODES: self.nodes,
            col.NORMALIZED_MEAN_ISI: self.normalized_mean_isi,
            col.ISI_CV: self.isi_cv,
            col.STABILIZED: self.stabilized,
            "diverged": self.diverged,
            "target_isi": self.target_isi,
            "refractory": self.refractory,
            "pulses": self.pulses,
            "controlled_mean_isi": self.controlled_mean_isi,
            "uncontrolled_mean_isi": self.uncontrolled_mean_isi,
            "controlled_spikes": len(self.controlled_isi),
            "uncontrolled_spikes": len(self.uncontrolled_isi),
            "return_map_slope": self.return_map_slope,
            "uncontrolled_isi_cv": self.uncontrolled_isi_cv,
        }


# ==========================================
# Spikes and return map
# ==========================================

class SpikeDetector:
    """Online upward-crossing detector with a refractory period."""

    def __init__(self, v_threshold: float, refractory: int, previous: float = -np.inf):
        self.v_threshold = v_threshold
        self.refractory = refractory
        self.previous = previous
        self.last: Optional[int] = None
        self.indices: List[int] = []

    def update(self, index: int, value: float) -> bool:
        crossed = self.previous < self.v_threshold <= value
        self.previous = value
        if crossed and (self.last is None or index - self.last > self.refractory):
            self.last = index
            self.indices.append(index)
            return True
        return False

    def train(self) -> SpikeTrain:
        return SpikeTrain.from_indices(self.indices)


def detect_spikes(v: Union[TimeSeries, np.ndarray], v_threshold: float, refractory: int) -> SpikeTrain:
    """
    Func: Spikes at upward threshold crossings, more than `refractory` samples apart.
    Args:
        * v: voltage trace
        * v_threshold: detection level
        * refractory: minimum spacing in samples
    Return: SpikeTrain (empty when nothing crosses)
    """
    values = as_values(v)
    if refractory < 0:
        raise ParameterError(f"refractory must be >= 0 (got {refractory})")
    crossings = np.nonzero((values[:-1] < v_threshold) & (values[1:] >= v_threshold))[0] + 1
    kept: List[int] = []
    for index in crossings:
        if not kept or index - kept[-1] > refractory:
            kept.append(int(index))
    return SpikeTrain.from_indices(kept)


def fit_return_map(isi: Union[SpikeTrain, Sequence[float]], fit_window: int = defaults.FIT_WINDOW) -> Tuple[float, float]:
    """
    Least-squares line I_{n+1} = a I_n + c over the last `fit_window` ISIs.

    Returns:
        (fixed point I* = c / (1 - a), slope a)

    Raises:
        ParameterError: fewer than 10 ISIs
        NoFixedPointError: |1 - a| < 1e-6
    """
    values = np.asarray(isi.isi if isinstance(isi, SpikeTrain) else isi, dtype=float)
    if values.shape[0] < MIN_RETURN_MAP_ISIS:
        raise ParameterError(f"return-map fit needs >= {MIN_RETURN_MAP_ISIS} ISIs (got {values.shape[0]})")
    window = values[-max(int(fit_window), MIN_RETURN_MAP_ISIS):]
    design = np.column_stack([window[:-1], np.ones(window.shape[0] - 1)])
    (a, c), *_ = scipy.linalg.lstsq(design, window[1:])
    if abs(1.0 - a) < 1e-6:
        raise NoFixedPointError(f"return-map slope {a} is too close to 1")
    return float(c / (1.0 - a)), float(a)


# ==========================================
# Predictors
# ==========================================

class NetworkPredictor:
    """
    Free-running voltage forecaster built on a trained reservoir readout.

    advance(u) feeds the previous voltage (measured or predicted) and
    returns the forecast of the current one.
    """

    def __init__(self, res: Reservoir, model: ReadoutModel, x: np.ndarray, mean: float,
                 ring: Optional[np.ndarray] = None):
        self.res = res
        self.model = model
        self.x = x.copy()
        self.mean = mean
        self._muW = res.mu * res.W
        self._w_in = res.alpha * res.W_in
        self._bias = res.bias
        self._ring = None if ring is None else ring.copy()
        self._pos = 0

    def advance(self, u: float) -> float:
        self.x = step_state(self.res, self.x, u - self.mean, self._muW, self._w_in, self._bias)
        if self._ring is None:
            features = self.model.feature_spec.select(self.x)
        elif self._ring.shape[0] == 0:
            features = np.concatenate([self.x, self.x])
        else:
            partner = self._ring[self._pos].copy()
            self._ring[self._pos] = self.x
            self._pos = (self._pos + 1) % self._ring.shape[0]
            features = np.concatenate([self.x, partner])
        return float(self.model.readout(features)) + self.mean


def train_predictor(spec: PredictorSpec, v_train: np.ndarray) -> NetworkPredictor:
    """
    Func: Teacher-force a network on the uncontrolled voltage.
    Args:
        * spec: network kind and parameters
        * v_train: training voltages; inputs v[:-1], teacher v[1:]
    Return: predictor positioned to forecast the sample after v_train[-1]
    """
    mean = float(np.mean(v_train))
    z = v_train - mean
    inputs, teacher = z[:-1], z[1:]
    res = build_reservoir(spec.m, spec.mu, spec.alpha, spec.b, spec.seed)

    if spec.kind == "rrnn":
        washout = min(spec.washout, inputs.shape[0] - 1)
        driven = drive(res, inputs, washout=washout)
        model = train_readout(driven, teacher[washout:], None, spec.svd_rtol)
        return NetworkPredictor(res, model, driven.final_state, mean)

    trrnn = TrrnnSpec(spec.tau_T, res)
    washout = max(spec.washout, trrnn.depth)
    aug = drive_augmented(trrnn, inputs, washout)
    model = train_trrnn(aug, teacher[washout:], spec.tau_T, spec.svd_rtol)
    ring = aug.history[aug.history.shape[0] - trrnn.depth:] if trrnn.depth else np.empty((0, res.m))
    return NetworkPredictor(res, model, aug.final_state, mean, ring)


# ==========================================
# Controlled runs
# ==========================================

def _simulate(integrator: FhnIntegrator, n_steps: int) -> np.ndarray:
    v = np.empty(n_steps)
    v[0] = integrator.v
    for k in range(1, n_steps):
        v[k] = integrator.step()
    return v


def _isi_cv(train: SpikeTrain, start: int) -> float:
    """Coefficient of variation of the ISIs that end at or after `start`."""
    late = train.isi[train.spike_indices[1:] >= start]
    if late.size < 2:
        return float("nan")
    mean = float(np.mean(late))
    return float(np.std(late) / mean) if mean > 0 else float("nan")


def run_controlled(
    fhn: FHNParams,
    predictor: PredictorSpec,
    ctrl: ControllerSpec,
    train_len: int,
    run_len: int,
    seed: int,
    resync_every: int = defaults.RESYNC_EVERY,
    stabilized_cv: float = defaults.STABILIZED_CV,
    initial: Optional[FHNState] = None,
) -> ControlRunReport:
    """
    Func: Train a predictor on the uncontrolled neuron, then pace it for run_len steps.
    Args:
        * fhn: neuron parameters
        * predictor: oracle, rrnn or trrnn
        * ctrl: pacing parameters (target_isi / refractory fitted when None)
        * train_len: uncontrolled samples used for training and the return-map fit
        * run_len: controlled steps
        * seed: noise seed; the uncontrolled reference continues the same noise stream
        * resync_every: steps between re-synchronisations of the network input (0 = never)
        * stabilized_cv: ISI CV limit over the last half of the run
        * initial: starting state, the rest equilibrium when None
    Return: ControlRunReport
    """
    if train_len < 2 or run_len < 1:
        raise ParameterError(f"train_len must be >= 2 and run_len >= 1 (got {train_len}, {run_len})")
    if resync_every < 0:
        raise ParameterError(f"resync_every must be >= 0 (got {resync_every})")

    integrator = FhnIntegrator(fhn, initial or fhn_equilibrium(fhn), seed)
    v_train = _simulate(integrator, train_len)

    slope = None
    target = ctrl.target_isi
    if target is None:
        detect_refractory = ctrl.refractory if ctrl.refractory is not None else PROVISIONAL_REFRACTORY
        train_spikes = detect_spikes(v_train, ctrl.v_threshold, detect_refractory)
        target, slope = fit_return_map(train_spikes, ctrl.fit_window)
    refractory = ctrl.refractory if ctrl.refractory is not None else int(0.5 * target)
    if not target > refractory:
        raise ParameterError(f"target_isi ({target}) must exceed refractory ({refractory})")
    pacing = ctrl.pacing_fraction * target
    if not pacing > refractory:
        raise ParameterError(f"pacing interval ({pacing}) must exceed refractory ({refractory})")
    logger.debug(f"Control target ISI {target:.1f} samples, pacing after {pacing:.1f}, refractory {refractory}")

    network = None if predictor.kind == "oracle" else train_predictor(predictor, v_train)
    nodes = 0 if network is None else predictor.m
    last_measured = float(v_train[-1])

    # uncontrolled reference on the same noise stream
    reference = integrator.copy()
    uncontrolled = SpikeDetector(ctrl.v_threshold, refractory, last_measured)
    for k in range(1, run_len + 1):
        uncontrolled.update(k, reference.step())

    controlled = SpikeDetector(ctrl.v_threshold, refractory, last_measured)
    predicted = SpikeDetector(ctrl.v_threshold, refractory, last_measured)
    plant = integrator.copy()
    v_prev, vhat_prev = last_measured, last_measured
    pulse_left, last_pulse, pulses = 0, 0, 0
    diverged = False
    for k in range(1, run_len + 1):
        extra = 0.0
        if pulse_left:
            extra = ctrl.pulse_amplitude
            pulse_left -= 1
        v_now = plant.step(extra)
        controlled.update(k, v_now)

        if network is None:
            vhat = v_now
        else:
            resync = k == 1 or (resync_every and (k - 1) % resync_every == 0)
            vhat = network.advance(v_prev if resync else vhat_prev)
            if not abs(vhat) <= plant.divergence_bound:
                logger.warning(f"Predictor diverged at control step {k}")
                diverged = True
                break
        predicted.update(k, vhat)

        since = max(predicted.last or 0, last_pulse)
        if not pulse_left and k - since > pacing:
            pulse_left, last_pulse = ctrl.pulse_width, k
            pulses += 1
        v_prev, vhat_prev = v_now, vhat

    controlled_train = controlled.train()
    uncontrolled_train = uncontrolled.train()
    controlled_mean = controlled_train.mean_isi()
    uncontrolled_mean = uncontrolled_train.mean_isi()
    normalized = controlled_mean / uncontrolled_mean if uncontrolled_mean > 0 else float("nan")
    cv = _isi_cv(controlled_train, run_len // 2)
    stabilized = bool(not diverged and np.isfinite(cv) and cv < stabilized_cv)

    return ControlRunReport(
        controlled_isi=controlled_train,
        uncontrolled_isi=uncontrolled_train,
        normalized_mean_isi=float(normalized),
        isi_cv=cv,
        nodes=nodes,
        stabilized=stabilized,
        architecture=predictor.kind,
        target_isi=float(target),
        refractory=int(refractory),
        pulses=pulses,
        diverged=diverged,
        controlled_mean_isi=controlled_mean,
        uncontrolled_mean_isi=uncontrolled_mean,
        return_map_slope=slope,
        uncontrolled_isi_cv=_isi_cv(uncontrolled_train, run_len // 2),
    )


# ==========================================
# Experiments
# ==========================================

def fhn_params_from(config: ExperimentConfig) -> FHNParams:
    return FHNParams(**config.fhn)


def controller_from(config: ExperimentConfig) -> ControllerSpec:
    return ControllerSpec(
        v_threshold=config.v_threshold,
        refractory=config.refractory,
        target_isi=config.target_isi,
        pulse_amplitude=config.pulse_amplitude,
        pulse_width=config.pulse_width,
        fit_window=config.fit_window,
        pacing_fraction=config.pacing_fraction,
    )


def predictor_from(config: ExperimentConfig, kind: str, m: int, mu: Optional[float] = None) -> PredictorSpec:
    """Predictor of one architecture; mu defaults to the architecture's control value."""
    if mu is None:
        mu = config.control_mu_trrnn if kind == "trrnn" else config.control_mu_rrnn
    return PredictorSpec(
        kind=kind,
        m=m,
        mu=mu,
        alpha=config.alpha,
        b=config.b,
        seed=derive_seed(config.seed, "network", 0),
        tau_T=config.control_tau_T,
        washout=config.washout,
        svd_rtol=config.svd_rtol,
    )


def fhn_control(config: ExperimentConfig) -> ControlRunReport:
    """One controlled run with config.predictor and config.m nodes."""
    logger.info("START control.fhn_control")
    report = run_controlled(
        fhn_params_from(config),
        predictor_from(config, config.predictor, config.m, config.mu),
        controller_from(config),
        config.control_train_len,
        config.control_run_len,
        derive_seed(config.seed, "sequence", 0),
        config.resync_every,
        config.stabilized_cv,
    )
    logger.info("END control.fhn_control")
    return report


@dataclass
class NodeSweepResult:
    reports: List[ControlRunReport] = field(default_factory=list)

    def table(self) -> List[Dict[str, Any]]:
        return [
            {
                col.NODES: r.nodes,
                col.ARCHITECTURE: r.architecture,
                col.NORMALIZED_MEAN_ISI: r.normalized_mean_isi,
                col.ISI_CV: r.isi_cv,
                col.STABILIZED: r.stabilized,
            }
            for r in self.reports
        ]

    def first_stabilizing(self, architecture: str) -> Optional[int]:
        sizes = [r.nodes for r in self.reports if r.architecture == architecture and r.stabilized]
        return min(sizes) if sizes else None


def node_sweep(config: ExperimentConfig, progress: ProgressCallback = None) -> NodeSweepResult:
    """
    Func: Controlled runs for every (architecture, node count) of the grid.
    Args:
        * config: node_grid, architectures, control parameters
        * progress: optional callback(done, total)
    Return: NodeSweepResult ordered by architecture, then node count
    """
    logger.info("START control.node_sweep")
    fhn = fhn_params_from(config)
    ctrl = controller_from(config)
    seed = derive_seed(config.seed, "sequence", 0)
    grid = [(arch, int(m)) for arch in config.architectures for m in sorted(config.node_grid)]

    def one(arch: str, m: int) -> ControlRunReport:
        report = run_controlled(fhn, predictor_from(config, arch, m), ctrl, config.control_train_len,
                                config.control_run_len, seed, config.resync_every, config.stabilized_cv)
        logger.debug(f"{arch} m={m}: cv={report.isi_cv:.4f}, stabilized={report.stabilized}")
        return report

    reports: List[Optional[ControlRunReport]] = [None] * len(grid)
    total = len(grid)
    workers = min(config.resolved_workers(), total)
    logger.debug(f"Node sweep: {total} runs on {workers} workers")
    if workers <= 1:
        for done, (arch, m) in enumerate(grid, start=1):
            reports[done - 1] = one(arch, m)
            if progress:
                progress(done, total)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(one, arch, m): index for index, (arch, m) in enumerate(grid)}
            for done, future in enumerate(as_completed(futures), start=1):
                reports[futures[future]] = future.result()
                if progress:
                    progress(done, total)

    result = NodeSweepResult(reports=list(reports))
    logger.info("END control.node_sweep")
    return result
