"""
App name: Takens Reservoir Toolkit (takres)
Description: Usecase class dispatching experiment configurations to the numerical
             usecases, persisting result tables and run records, and tracking the
             progress of background runs.
"""

import itertools
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from usecase.base_usecase import UsecaseBase
from usecase.control_usecase import fhn_control, node_sweep
from usecase.embedding_usecase import (
    EmbeddingSpec,
    acf,
    delay_embed,
    delay_projection,
    false_nearest_neighbors,
    fnn_table,
    select_tau0,
)
from usecase.hybrid_usecase import delay_scan, trrnn_benchmark
from usecase.reservoir_usecase import (
    RunRow,
    build_reservoir,
    drive,
    ensemble_benchmark,
    mg_params_from,
    prepare_sequence,
)
from usecase.signals_usecase import gen_mackey_glass
from usecase.takens_analysis_usecase import (
    WindowFilterSpec,
    cca_profile,
    epsilon_bounds,
    mu_scan,
    node_projection,
    takens_spec,
    tau_scan,
    window_filter,
)
from utils.config import ExperimentConfig
from utils.constants import Constants
from utils.decorators import experiment_error_handler
from utils.exceptions import ConfigError
from utils.files import json_safe
from utils.logger import logger
from utils.seeds import derive_seed, seed_schedule

exp = Constants.Experiments
col = Constants.Columns
code = Constants.ResponseCode
exit_code = Constants.ExitCode
defaults = Constants.Defaults

RUN_COLUMNS = [col.RUN_ID, col.NETWORK_ID, col.SEQUENCE_ID, col.NMSE, col.DIVERGENT, col.BLOWN_UP]

# (summary, written files, divergent fraction or None)
Outcome = Tuple[Dict[str, Any], List[Path], Optional[float]]


class ExperimentsUsecase(UsecaseBase):
    """
    A usecase class responsible for running experiments for the CLI and the
    HTTP service, and for tracking background runs.
    """

    # Class-level progress store shared across instances
    # Format: {runID: {"current": int, "total": int, "status": str, "message": str, "summary": dict}}
    _progress_store: dict = {}
    _progress_lock = threading.Lock()
    _run_ids = itertools.count(1)

    def __init__(self, out_dir: Path | str | None = None):
        super().__init__(out_dir)
        self._dispatch: Dict[str, Callable[[ExperimentConfig, Path, Callable], Outcome]] = {
            exp.PREDICT: self._run_predict,
            exp.TRRNN: self._run_trrnn,
            exp.SCAN_TAU: self._run_scan_tau,
            exp.SCAN_MU: self._run_scan_mu,
            exp.SCAN_DELAY: self._run_scan_delay,
            exp.FHN_CONTROL: self._run_fhn_control,
            exp.NODE_SWEEP: self._run_node_sweep,
            exp.CCA: self._run_cca,
            exp.BOUNDS: self._run_bounds,
            exp.EMBED_ACF: self._run_embed_acf,
            exp.EMBED_FNN: self._run_embed_fnn,
            exp.EMBED: self._run_embed,
        }

    # ==========================================
    # Progress Tracking Methods
    # ==========================================

    @classmethod
    def next_run_id(cls) -> int:
        with cls._progress_lock:
            return next(cls._run_ids)

    @classmethod
    def _init_progress(cls, run_id: int, experiment: str):
        """Initialize progress tracking for a run."""
        with cls._progress_lock:
            cls._progress_store[run_id] = {
                "current": 0,
                "total": 0,
                "status": "processing",
                "message": f"Running {experiment}",
                "experiment": experiment,
            }
        logger.debug(f"Progress initialized for runID {run_id}")

    @classmethod
    def _update_progress(cls, run_id: int, current: int, total: int):
        """Update progress for a run."""
        with cls._progress_lock:
            if run_id in cls._progress_store:
                cls._progress_store[run_id]["current"] = current
                cls._progress_store[run_id]["total"] = total
        logger.debug(f"Progress updated for runID {run_id}: {current}/{total}")

    @classmethod
    def _complete_progress(cls, run_id: int, summary: Optional[dict] = None):
        """Mark run as complete."""
        with cls._progress_lock:
            if run_id in cls._progress_store:
                entry = cls._progress_store[run_id]
                entry["status"] = "complete"
                entry["current"] = entry["total"]
                entry["message"] = "Complete"
                entry["summary"] = summary
        logger.debug(f"Progress completed for runID {run_id}")

    @classmethod
    def _error_progress(cls, run_id: int, error_msg: str):
        """Mark run as errored."""
        with cls._progress_lock:
            if run_id in cls._progress_store:
                cls._progress_store[run_id]["status"] = "error"
                cls._progress_store[run_id]["message"] = error_msg
        logger.error(f"Progress error for runID {run_id}: {error_msg}")

    @classmethod
    def get_progress(cls, run_id: int) -> dict | None:
        """
        Get progress for a run.
        Returns None if runID not found in progress store.
        """
        with cls._progress_lock:
            if run_id not in cls._progress_store:
                return None

            progress = cls._progress_store[run_id].copy()
            total = progress["total"]
            current = progress["current"]
            pct = int((current / total) * 100) if total > 0 else 0

            result = {
                "runID": run_id,
                "current": current,
                "total": total,
                "pct": pct,
                "status": progress["status"],
                "message": progress["message"],
                "experiment": progress.get("experiment", ""),
            }
            if progress.get("summary") is not None:
                result["summary"] = progress["summary"]
            return result

    @classmethod
    def clear_progress(cls, run_id: int):
        """Remove progress tracking for a run (cleanup)."""
        with cls._progress_lock:
            if run_id in cls._progress_store:
                del cls._progress_store[run_id]
        logger.debug(f"Progress cleared for runID {run_id}")

    @classmethod
    def active_runs(cls) -> int:
        with cls._progress_lock:
            return sum(1 for p in cls._progress_store.values() if p["status"] == "processing")

    # ==========================================
    # Entry Points
    # ==========================================

    @experiment_error_handler
    def run_experiment(self, config: ExperimentConfig, run_id: Optional[int] = None,
                       out_dir: Path | str | None = None) -> dict:
        """
        Func: Run one experiment and persist its result files.
        Args:
            * config: validated ExperimentConfig
            * run_id: progress-store id for background runs
            * out_dir: output directory (default: config / env / ./results, plus the experiment name)
        Return: response dict with exit_code and {experiment, files, summary, config_hash}
        """
        logger.info("START ExperimentsUsecase.run_experiment")
        logger.debug(f"Config: {config.to_dict()}")
        config.validate()
        runner = self._dispatch.get(config.experiment)
        if runner is None:
            raise ConfigError(f"unknown experiment '{config.experiment}'")

        directory = Path(out_dir) if out_dir is not None else (self._out_dir or config.resolved_out_dir()) / config.experiment
        started = datetime.now(timezone.utc).isoformat()

        def progress(done: int, total: int):
            if run_id is not None:
                self._update_progress(run_id, done, total)

        summary, files, divergent_fraction = runner(config, directory, progress)
        summary = json_safe(summary)
        files.append(self._write_json(directory, "summary.json", summary))

        status = exit_code.SUCCESS
        if divergent_fraction is not None and divergent_fraction > defaults.DIVERGENCE_DOMINATED_FRACTION:
            logger.warning(f"{100 * divergent_fraction:.0f}% of runs divergent")
            status = exit_code.DIVERGENCE_DOMINATED

        record = {
            "config_hash": config.config_hash(),
            "config": config.to_dict(),
            "experiment": config.experiment,
            "version": Constants.VERSION,
            "started_at": started,
            "finished_at": datetime.now(timezone.utc).isoformat(),
            "exit_code": status,
            "summary": summary,
            "files": sorted(p.name for p in files),
        }
        files.append(self._write_json(directory, "run_record.json", record))

        logger.info("END ExperimentsUsecase.run_experiment")
        response = self._build_json_response(code.CODE_200, "Complete", {
            "experiment": config.experiment,
            "config_hash": record["config_hash"],
            "out_dir": str(directory),
            "files": [str(p) for p in files],
            "summary": summary,
        })
        response["exit_code"] = status
        return response

    @experiment_error_handler
    def start_async(self, data: dict, max_active: int) -> dict:
        """
        Validate a config and register a background run.
        Returns 202 Accepted with runID for progress polling, 503 when busy.
        """
        logger.info("START ExperimentsUsecase.start_async")
        logger.debug(f"Request Body:{data}")

        config = ExperimentConfig.from_dict(data)
        if self.active_runs() >= max_active:
            logger.warning(f"Rejecting run: {max_active} runs already active")
            return self._build_json_response(code.CODE_503, "Too many active runs", None)

        run_id = self.next_run_id()
        self._init_progress(run_id, config.experiment)

        logger.info("END ExperimentsUsecase.start_async")
        return {
            "status_code": code.CODE_202,
            "context": {
                "message": "Experiment started",
                "runID": run_id,
                "experiment": config.experiment,
                "config": config.to_dict(),
            }
        }

    def run_background(self, run_id: int, config_data: dict):
        """
        Run an experiment in background (called by FastAPI BackgroundTasks).
        """
        logger.info(f"START run_background for runID {run_id}")
        try:
            config = ExperimentConfig.from_dict(config_data)
            out_dir = (self._out_dir or config.resolved_out_dir()) / f"run-{run_id}" / config.experiment
            response = self.run_experiment(config, run_id=run_id, out_dir=out_dir)
            if response["status_code"] != code.CODE_200:
                self._error_progress(run_id, response["context"].get("error", response["context"]["message"]))
                return
            data = response["context"]["data"]
            self._complete_progress(run_id, {**data["summary"], "exit_code": response["exit_code"]})
            logger.info(f"END run_background for runID {run_id}")
        except Exception as e:
            logger.error(f"Error in run_background: {e}", exc_info=True)
            self._error_progress(run_id, f"Error running experiment: {str(e)}")

    # ==========================================
    # Experiment Runners
    # ==========================================

    def _write_runs(self, directory: Path, rows: List[RunRow], extra: Optional[List[str]] = None,
                    name: str = "runs.csv") -> Path:
        extra = extra or []
        return self._write_csv(directory, name, RUN_COLUMNS + extra, (
            [r.pair.run_id, r.pair.network_id, r.pair.sequence_id,
             r.metrics.nmse, r.metrics.divergent, r.metrics.blown_up] + [r.extras.get(k) for k in extra]
            for r in rows
        ))

    def _write_table(self, directory: Path, name: str, table: List[Dict[str, Any]], columns: List[str]) -> Path:
        return self._write_csv(directory, name, columns, ([entry.get(c) for c in columns] for entry in table))

    def _run_predict(self, config: ExperimentConfig, directory: Path, progress: Callable) -> Outcome:
        rows, summary = ensemble_benchmark(config, progress)
        files = [self._write_runs(directory, rows, name="results.csv")]
        return summary, files, float(np.mean([r.metrics.divergent for r in rows]))

    def _run_trrnn(self, config: ExperimentConfig, directory: Path, progress: Callable) -> Outcome:
        rows, summary = trrnn_benchmark(config, progress)
        files = [self._write_runs(directory, rows, name="results.csv")]
        return {**summary, col.TAU_T: config.tau_T}, files, float(np.mean([r.metrics.divergent for r in rows]))

    def _run_scan_tau(self, config: ExperimentConfig, directory: Path, progress: Callable) -> Outcome:
        result = tau_scan(config, progress)
        columns = [col.TAU0_NET, col.MEAN_NMSE, col.STD_NMSE, col.DIVERGENCE_PCT, col.MEAN_NODES, col.BLOWN_UP]
        files = [
            self._write_runs(directory, result.rows, [col.TAU0_NET]),
            self._write_table(directory, "scan_tau.csv", result.table, columns),
        ]
        return {**result.summary, "points": len(result.table)}, files, None

    def _run_scan_mu(self, config: ExperimentConfig, directory: Path, progress: Callable) -> Outcome:
        result = mu_scan(config, progress)
        columns = [col.MU, col.EPS1, col.EPS2, col.MEAN_NMSE, col.STD_NMSE, col.DIVERGENCE_PCT, col.BLOWN_UP]
        files = [
            self._write_runs(directory, result.rows, [col.MU, col.EPS1, col.EPS2]),
            self._write_table(directory, "scan_mu.csv", result.table, columns),
        ]
        best = min(result.table, key=lambda e: e[col.MEAN_NMSE])
        return {"best_mu": best[col.MU], "best_mean_nmse": best[col.MEAN_NMSE]}, files, None

    def _run_scan_delay(self, config: ExperimentConfig, directory: Path, progress: Callable) -> Outcome:
        result = delay_scan(config, progress)
        columns = [col.TAU_T, col.MEAN_NMSE, col.STD_NMSE, col.DIVERGENCE_PCT, col.EPS1, col.EPS2, col.BLOWN_UP]
        files = [
            self._write_runs(directory, result.rows, [col.TAU_T, col.EPS1, col.EPS2]),
            self._write_table(directory, "scan_delay.csv", result.table, columns),
        ]
        best = min(result.table, key=lambda e: e[col.MEAN_NMSE])
        return {"best_tau_T": best[col.TAU_T], "best_mean_nmse": best[col.MEAN_NMSE]}, files, None

    def _run_fhn_control(self, config: ExperimentConfig, directory: Path, progress: Callable) -> Outcome:
        report = fhn_control(config)
        progress(1, 1)
        files = [
            self._write_csv(directory, "isi.csv", [col.SPIKE_INDEX, col.ISI], report.controlled_isi.rows()),
            self._write_json(directory, "report.json", report.to_dict()),
        ]
        return report.to_dict(), files, None

    def _run_node_sweep(self, config: ExperimentConfig, directory: Path, progress: Callable) -> Outcome:
        result = node_sweep(config, progress)
        columns = [col.NODES, col.ARCHITECTURE, col.NORMALIZED_MEAN_ISI, col.ISI_CV, col.STABILIZED]
        files = [self._write_table(directory, "node_sweep.csv", result.table(), columns)]
        summary = {f"first_stabilizing_{arch}": result.first_stabilizing(arch) for arch in config.architectures}
        return summary, files, None

    def _single_run(self, config: ExperimentConfig):
        """Network 0 driven by sequence 0 of the schedule."""
        pair = seed_schedule(config.seed, 1, 1)[0]
        values = gen_mackey_glass(mg_params_from(config), config.train_len + 1 + config.horizon,
                                  "random", pair.sequence_seed).values
        split = prepare_sequence(values, config.train_len, config.horizon)
        res = build_reservoir(config.m, config.mu, config.alpha, config.b, pair.network_seed, config.weight_range)
        driven = drive(res, split.train_input, washout=config.washout)
        profile = cca_profile(driven, split.train_input[driven.washout:], config.cca_max_lag)
        return split, driven, profile

    def _run_cca(self, config: ExperimentConfig, directory: Path, progress: Callable) -> Outcome:
        split, driven, profile = self._single_run(config)
        selected = window_filter(profile, WindowFilterSpec(config.tau0_net, config.window_delta, config.window_M))
        retained_input = split.train_input[driven.washout:]

        delay_rows = [(lag, a, b) for lag, cloud in delay_projection(retained_input, config.projection_lags).items()
                      for a, b in cloud]
        node_rows = [(lag, a, b) for lag, cloud in node_projection(driven, profile, config.projection_lags).items()
                     for a, b in cloud]
        files = [
            self._write_csv(directory, "profile.csv", [col.NODE_ID, col.BEST_LAG, col.CC_MAX], profile.rows()),
            self._write_csv(directory, "projection_delay.csv", [col.LAG, "x", "y"], delay_rows),
            self._write_csv(directory, "projection_nodes.csv", [col.LAG, "x", "y"], node_rows),
        ]
        progress(1, 1)
        summary = {
            "l_min": profile.l_min,
            "l_max": profile.l_max,
            "flagged": int(profile.flagged.sum()),
            "selected_with_multiplicity": int(selected.size),
            "selected_unique": int(np.unique(selected).size),
            col.TAU0_NET: config.tau0_net,
        }
        return summary, files, None

    def _run_bounds(self, config: ExperimentConfig, directory: Path, progress: Callable) -> Outcome:
        split, driven, profile = self._single_run(config)
        embed = delay_embed(split.train_input, takens_spec(config))
        selected = window_filter(profile, WindowFilterSpec(config.tau0_net, config.window_delta, config.window_M))

        rows = []
        for label, prof in (("all", profile), ("filtered", profile.subset(selected))):
            if prof.defined.size == 0:
                logger.warning(f"No defined nodes in the '{label}' selection; bounds left empty")
                rows.append([label, 0, None, None, None, None, None, None, config.eps_mode])
                continue
            bounds = epsilon_bounds(embed, driven, prof, config.eps_mode, state_offset=driven.washout)
            rows.append([label, bounds.h, bounds.eps1, bounds.eps2, bounds.eps_min, bounds.eps_max,
                         prof.l_min, prof.l_max, bounds.mode])
        files = [self._write_csv(directory, "bounds.csv",
                                 ["nodes", "h", col.EPS1, col.EPS2, "eps_min", "eps_max", "l_min", "l_max", "mode"],
                                 rows)]
        progress(1, 1)
        summary = {f"{r[0]}_{key}": value for r in rows
                   for key, value in zip(("h", col.EPS1, col.EPS2), (r[1], r[2], r[3]))}
        return {**summary, "mode": config.eps_mode}, files, None

    def _embedding_series(self, config: ExperimentConfig) -> np.ndarray:
        seed = derive_seed(config.seed, "sequence", 0)
        return gen_mackey_glass(mg_params_from(config), config.series_len, "random", seed).values

    def _run_embed_acf(self, config: ExperimentConfig, directory: Path, progress: Callable) -> Outcome:
        rho = acf(self._embedding_series(config), config.acf_max_lag)
        files = [self._write_csv(directory, "acf.csv", [col.LAG, col.VALUE], enumerate(rho))]
        progress(1, 1)
        return {"tau0": select_tau0(rho, config.tau0_mode), "tau0_mode": config.tau0_mode}, files, None

    def _run_embed_fnn(self, config: ExperimentConfig, directory: Path, progress: Callable) -> Outcome:
        series = self._embedding_series(config)
        tau0 = select_tau0(acf(series, config.acf_max_lag), config.tau0_mode)
        fractions, m_min = false_nearest_neighbors(
            series, tau0, config.fnn_m_max, config.fnn_r_tol, config.fnn_fraction_threshold, config.fnn_a_tol
        )
        files = [self._write_csv(directory, "fnn.csv", [col.M, col.FRACTION], fnn_table(fractions))]
        progress(1, 1)
        return {"tau0": tau0, "M_min": m_min}, files, None

    def _run_embed(self, config: ExperimentConfig, directory: Path, progress: Callable) -> Outcome:
        spec = EmbeddingSpec(config.embedding_tau0, config.embedding_M)
        matrix = delay_embed(self._embedding_series(config), spec)
        header = [f"y{c}" for c in range(matrix.cols)]
        files = [self._write_csv(directory, "embedding.csv", header, matrix.entries.tolist())]
        progress(1, 1)
        return {"tau0": spec.tau0, col.M: spec.M, "rows": matrix.rows}, files, None
