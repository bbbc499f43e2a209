"""
App name: Takens Reservoir Toolkit (takres)
Description: Versioned experiment configuration (flat JSON schema), per-experiment
             defaults, desk/full scale presets and the canonical config hash.
"""

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

from utils.constants import Constants
from utils.exceptions import ConfigError, UnknownExperimentError

defaults = Constants.Defaults
exp = Constants.Experiments

SCALES = ("desk", "full")
NMSE_MODES = ("variance", "stdev")
EPS_MODES = ("mean", "per-pair-ratio")
TAU0_MODES = ("abs-min", "first-zero", "min")
PREDICTORS = ("oracle", "rrnn", "trrnn")
ARCHITECTURES = ("rrnn", "trrnn")

MG_KEYS = ("theta", "nu", "psi", "tau_m", "delta", "subsample", "transient")
FHN_KEYS = ("epsilon", "g", "D", "H", "I", "noise_sigma", "dt", "noise_scaled_by_epsilon")


def _default_tau0_net_grid() -> List[int]:
    return list(range(defaults.TAU0_NET_MIN, defaults.TAU0_NET_MAX + 1))


def _default_mu_grid() -> List[float]:
    return [round(0.1 * k, 1) for k in range(1, 16)]


def _default_tau_T_grid() -> List[int]:
    return list(range(-20, 1))


def _default_node_grid() -> List[int]:
    return [11, 12, 20, 40, 80, 120, 200, 340]


@dataclass
class ExperimentConfig:
    """
    One flat, versioned experiment configuration.

    Every field has a default; `for_experiment` layers the experiment's own
    defaults, and `from_dict` layers user overrides on top of those.
    """

    experiment: str = exp.PREDICT
    schema_version: int = Constants.SCHEMA_VERSION
    seed: int = defaults.BASE_SEED

    # reservoir
    m: int = defaults.M_NODES
    mu: float = defaults.MU
    alpha: float = defaults.ALPHA
    b: float = defaults.B
    weight_range: float = defaults.WEIGHT_RANGE
    train_len: int = defaults.TRAIN_LEN
    washout: int = defaults.WASHOUT
    horizon: int = defaults.HORIZON
    ensemble_networks: int = 5
    ensemble_sequences: int = 5
    nmse_mode: str = "variance"
    svd_rtol: float = defaults.SVD_RTOL

    # signal overrides
    mg: Dict[str, Any] = field(default_factory=dict)
    fhn: Dict[str, Any] = field(default_factory=dict)

    # embedding
    series_len: int = 10000
    acf_max_lag: int = defaults.ACF_MAX_LAG
    tau0_mode: str = "abs-min"
    embedding_tau0: int = defaults.TAU0
    embedding_M: int = defaults.EMBEDDING_M
    fnn_m_max: int = defaults.FNN_M_MAX
    fnn_r_tol: float = defaults.FNN_R_TOL
    fnn_a_tol: Optional[float] = defaults.FNN_A_TOL
    fnn_fraction_threshold: float = defaults.FNN_FRACTION_THRESHOLD
    projection_lags: List[int] = field(default_factory=lambda: [-7, -12, -17])

    # takens analysis
    cca_max_lag: int = defaults.CCA_MAX_LAG
    tau0_net: int = defaults.TAU0
    window_delta: int = defaults.WINDOW_DELTA
    window_M: int = defaults.WINDOW_M
    tau0_net_grid: List[int] = field(default_factory=_default_tau0_net_grid)
    mu_grid: List[float] = field(default_factory=_default_mu_grid)
    eps_mode: str = "mean"

    # hybrid
    tau_T: int = defaults.TAU_T
    tau_T_grid: List[int] = field(default_factory=_default_tau_T_grid)

    # control
    predictor: str = "trrnn"
    control_train_len: int = defaults.CONTROL_TRAIN_LEN
    control_run_len: int = defaults.CONTROL_RUN_LEN
    control_tau_T: int = defaults.CONTROL_TAU_T
    control_mu_rrnn: float = defaults.CONTROL_MU_RRNN
    control_mu_trrnn: float = defaults.CONTROL_MU_TRRNN
    v_threshold: float = defaults.V_THRESHOLD
    refractory: Optional[int] = None
    target_isi: Optional[float] = None
    pulse_amplitude: float = defaults.PULSE_AMPLITUDE
    pulse_width: int = defaults.PULSE_WIDTH
    fit_window: int = defaults.FIT_WINDOW
    pacing_fraction: float = defaults.PACING_FRACTION
    resync_every: int = defaults.RESYNC_EVERY
    stabilized_cv: float = defaults.STABILIZED_CV
    node_grid: List[int] = field(default_factory=_default_node_grid)
    architectures: List[str] = field(default_factory=lambda: list(ARCHITECTURES))

    # run
    workers: Optional[int] = None
    out_dir: Optional[str] = None

    # ==========================================
    # Construction
    # ==========================================

    @classmethod
    def for_experiment(cls, experiment: str) -> "ExperimentConfig":
        """Defaults for one experiment name."""
        if experiment not in exp.ALL:
            raise UnknownExperimentError(
                f"unknown experiment '{experiment}' (expected one of {', '.join(exp.ALL)})"
            )
        return cls(experiment=experiment, **EXPERIMENT_DEFAULTS.get(experiment, {}))

    @classmethod
    def from_dict(cls, data: Dict[str, Any], experiment: Optional[str] = None,
                  scale: Optional[str] = None) -> "ExperimentConfig":
        """
        Func: Build a validated config from a JSON-like dict.
        Args:
            * data: user overrides (unknown keys are rejected)
            * experiment: experiment name when not given in `data`
            * scale: optional desk/full preset, applied before the overrides
        Return: ExperimentConfig
        """
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        data = dict(data)
        name = data.pop("experiment", None) or experiment
        if experiment and name != experiment:
            raise ConfigError(f"config names experiment '{name}' but '{experiment}' was requested")
        if not name:
            raise ConfigError("config does not name an experiment")

        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

        version = data.get("schema_version", Constants.SCHEMA_VERSION)
        if version != Constants.SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version} (expected {Constants.SCHEMA_VERSION})")

        base = cls.for_experiment(name)
        if scale:
            base = base.apply_scale(scale)
        overrides = {key: _coerce(key, value, getattr(base, key)) for key, value in data.items()}
        config = replace(base, **overrides)
        config.validate()
        return config

    @classmethod
    def load(cls, path: Path | str, experiment: Optional[str] = None,
             scale: Optional[str] = None) -> "ExperimentConfig":
        """Read a JSON config file."""
        try:
            with open(path, encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        return cls.from_dict(data, experiment, scale)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        """Copy with extra overrides, validated."""
        known = {f.name for f in fields(self)}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        config = replace(self, **{k: _coerce(k, v, getattr(self, k)) for k, v in overrides.items()})
        config.validate()
        return config

    def apply_scale(self, scale: str) -> "ExperimentConfig":
        """Desk (5x5, 10^6 control steps) or full (20x20, 4x10^6) preset."""
        if scale not in SCALES:
            raise ConfigError(f"unknown scale '{scale}' (expected one of {SCALES})")
        preset = SCALE_PRESETS[scale]
        return replace(self, **preset)

    # ==========================================
    # Validation
    # ==========================================

    def validate(self) -> None:
        """Raise ConfigError on any out-of-range value."""
        if self.experiment not in exp.ALL:
            raise UnknownExperimentError(f"unknown experiment '{self.experiment}'")

        _require(self.m >= 1, "m must be >= 1")
        _require(self.weight_range > 0, "weight_range must be > 0")
        _require(self.train_len >= 2, "train_len must be >= 2")
        _require(0 <= self.washout < self.train_len, "washout must satisfy 0 <= washout < train_len")
        _require(self.horizon >= 1, "horizon must be >= 1")
        _require(self.ensemble_networks >= 1, "ensemble_networks must be >= 1")
        _require(self.ensemble_sequences >= 1, "ensemble_sequences must be >= 1")
        _require(self.nmse_mode in NMSE_MODES, f"nmse_mode must be one of {NMSE_MODES}")
        _require(self.svd_rtol >= 0, "svd_rtol must be >= 0")

        unknown_mg = sorted(set(self.mg) - set(MG_KEYS))
        _require(not unknown_mg, f"unknown mg keys: {unknown_mg}")
        unknown_fhn = sorted(set(self.fhn) - set(FHN_KEYS))
        _require(not unknown_fhn, f"unknown fhn keys: {unknown_fhn}")

        _require(self.series_len >= 4, "series_len must be >= 4")
        _require(self.acf_max_lag >= 2, "acf_max_lag must be >= 2")
        _require(self.tau0_mode in TAU0_MODES, f"tau0_mode must be one of {TAU0_MODES}")
        _require(self.embedding_tau0 != 0, "embedding_tau0 must be non-zero")
        _require(self.embedding_M >= 1, "embedding_M must be >= 1")
        _require(self.fnn_m_max >= 2, "fnn_m_max must be >= 2")
        _require(self.fnn_r_tol > 0, "fnn_r_tol must be > 0")
        _require(self.fnn_a_tol is None or self.fnn_a_tol > 0, "fnn_a_tol must be > 0 or null")
        _require(0 < self.fnn_fraction_threshold < 1, "fnn_fraction_threshold must be in (0, 1)")
        _require(all(lag != 0 for lag in self.projection_lags), "projection_lags must be non-zero")

        _require(self.cca_max_lag >= 1, "cca_max_lag must be >= 1")
        _require(self.window_delta >= 0, "window_delta must be >= 0")
        _require(self.window_M >= 1, "window_M must be >= 1")
        _require(len(self.tau0_net_grid) >= 1, "tau0_net_grid must not be empty")
        _require(len(self.mu_grid) >= 1, "mu_grid must not be empty")
        _require(self.eps_mode in EPS_MODES, f"eps_mode must be one of {EPS_MODES}")

        _require(self.tau_T <= 0, "tau_T must be <= 0")
        _require(len(self.tau_T_grid) >= 1 and all(t <= 0 for t in self.tau_T_grid),
                 "tau_T_grid must be non-empty with values <= 0")

        _require(self.predictor in PREDICTORS, f"predictor must be one of {PREDICTORS}")
        _require(self.control_train_len >= 2, "control_train_len must be >= 2")
        _require(self.control_run_len >= 1, "control_run_len must be >= 1")
        _require(self.control_tau_T <= 0, "control_tau_T must be <= 0")
        _require(self.pulse_width >= 1, "pulse_width must be >= 1")
        _require(self.fit_window >= 10, "fit_window must be >= 10")
        _require(0 < self.pacing_fraction <= 1, "pacing_fraction must lie in (0, 1]")
        _require(self.resync_every >= 0, "resync_every must be >= 0")
        _require(self.refractory is None or self.refractory >= 0, "refractory must be >= 0")
        _require(self.target_isi is None or self.target_isi > 0, "target_isi must be > 0")
        _require(self.stabilized_cv > 0, "stabilized_cv must be > 0")
        _require(len(self.node_grid) >= 1 and all(n >= 1 for n in self.node_grid),
                 "node_grid must be non-empty with values >= 1")
        _require(all(a in ARCHITECTURES for a in self.architectures),
                 f"architectures must be drawn from {ARCHITECTURES}")

        _require(self.workers is None or self.workers >= 1, "workers must be >= 1")

    # ==========================================
    # Derived values
    # ==========================================

    def resolved_workers(self) -> int:
        """Explicit workers, else TAKRES_WORKERS, else the CPU count."""
        if self.workers:
            return int(self.workers)
        env_value = os.getenv(Constants.Env.WORKERS)
        if env_value:
            try:
                return max(1, int(env_value))
            except ValueError as e:
                raise ConfigError(f"{Constants.Env.WORKERS} must be an integer (got {env_value})") from e
        return os.cpu_count() or 1

    def resolved_out_dir(self) -> Path:
        """Explicit out_dir, else TAKRES_OUT_DIR, else ./results."""
        return Path(self.out_dir or os.getenv(Constants.Env.OUT_DIR) or "results")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def canonical_json(self) -> str:
        """Sorted keys, no whitespace; run-local fields (workers, out_dir) excluded."""
        data = self.to_dict()
        data.pop("workers", None)
        data.pop("out_dir", None)
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


# ==========================================
# Presets
# ==========================================

EXPERIMENT_DEFAULTS: Dict[str, Dict[str, Any]] = {
    exp.TRRNN: {"m": defaults.TRRNN_M, "mu": defaults.TRRNN_MU},
    exp.SCAN_DELAY: {"m": defaults.TRRNN_M, "mu": defaults.TRRNN_MU},
    exp.FHN_CONTROL: {"m": 12, "mu": defaults.CONTROL_MU_TRRNN, "predictor": "trrnn"},
    exp.NODE_SWEEP: {"mu": defaults.CONTROL_MU_TRRNN},
}

SCALE_PRESETS: Dict[str, Dict[str, Any]] = {
    "desk": {"ensemble_networks": 5, "ensemble_sequences": 5, "control_run_len": 1_000_000},
    "full": {"ensemble_networks": 20, "ensemble_sequences": 20, "control_run_len": 4_000_000},
}

# element type of each list field, given as a sample value for _coerce
LIST_ELEMENT_SAMPLES: Dict[str, Any] = {
    "projection_lags": 0,
    "tau0_net_grid": 0,
    "tau_T_grid": 0,
    "node_grid": 0,
    "mu_grid": 0.0,
    "architectures": "",
}


# ==========================================
# Helpers
# ==========================================

def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def _coerce(key: str, value: Any, current: Any) -> Any:
    """Type-check one override against the current value's type."""
    if value is None:
        if current is None or key in ("refractory", "target_isi", "fnn_a_tol", "workers", "out_dir"):
            return None
        raise ConfigError(f"{key} must not be null")

    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean (got {value!r})")
        return value
    if isinstance(current, int) or key in ("refractory", "workers"):
        if (isinstance(value, bool) or not isinstance(value, (int, float))
                or not math.isfinite(value) or int(value) != value):
            raise ConfigError(f"{key} must be an integer (got {value!r})")
        return int(value)
    if isinstance(current, float) or key in ("target_isi", "fnn_a_tol"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number (got {value!r})")
        return float(value)
    if isinstance(current, str) or key == "out_dir":
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string (got {value!r})")
        return value
    if isinstance(current, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key} must be a list (got {value!r})")
        sample = LIST_ELEMENT_SAMPLES.get(key)
        if sample is None:
            return list(value)
        return [_coerce(f"{key}[{i}]", item, sample) for i, item in enumerate(value)]
    if isinstance(current, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{key} must be an object (got {value!r})")
        return dict(value)
    return value
