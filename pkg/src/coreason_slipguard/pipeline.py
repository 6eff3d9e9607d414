# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.

import json
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Union

from loguru import logger
from pydantic import BaseModel, ValidationError

from coreason_slipguard.basis import ReferenceProfile
from coreason_slipguard.controllers import ModelBundle, run_closed_loop
from coreason_slipguard.dataset import DatasetLoader, gen_dataset, write_trial
from coreason_slipguard.grasp_sim import OBJECT_PRESETS, GraspSimulator, get_preset
from coreason_slipguard.metrics import aggregate_cells, compute_metrics, mean_std, rov_summary, write_rows_csv
from coreason_slipguard.models import load_model, save_model
from coreason_slipguard.report import ReportSummary, build_report
from coreason_slipguard.schemas import (
    ControllerConfig,
    ControllerKind,
    DatasetManifest,
    ExperimentConfig,
    GeneralizationRow,
    MetricsRow,
    ModelKind,
    ProfileSpec,
    TrialLog,
    TrialMetrics,
)
from coreason_slipguard.signal_filter import windows_from_trials
from coreason_slipguard.training import EvalReport, TrainOutcome, evaluate, fit_on_trials, split_trials
from coreason_slipguard.utils.seeding import derive_seed

OUT_DIR_ENV = "SLIPGUARD_OUT_DIR"


def default_out_root() -> Path:
    return Path(os.getenv(OUT_DIR_ENV, "out"))


def load_config(path: Optional[Union[str, Path]]) -> ExperimentConfig:
    """Reads an ExperimentConfig from JSON; no path means all defaults."""
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return ExperimentConfig.model_validate(json.load(f))
    except json.JSONDecodeError as e:
        raise ValueError(f"Invalid JSON in config {path}: {e}") from e
    except ValidationError as e:
        raise ValueError(f"Invalid config {path}: {e}") from e


class RunPaths(BaseModel):
    root: Path

    @property
    def dataset(self) -> Path:
        return self.root / "dataset"

    @property
    def models(self) -> Path:
        return self.root / "models"

    @property
    def trials(self) -> Path:
        return self.root / "trials"

    @property
    def report(self) -> Path:
        return self.root / "report"

    def model_file(self, kind: ModelKind) -> Path:
        return self.models / f"{kind}.json"


class TrialJob(BaseModel):
    """One closed-loop trial of a sweep or generalization run."""

    trial_id: str
    seed: int
    controller: ControllerConfig
    preset: Optional[str] = None


def _run_job(
    job: TrialJob, profile: ReferenceProfile, models: ModelBundle, config: ExperimentConfig
) -> TrialLog:
    sim = GraspSimulator(get_preset(job.preset) if job.preset else config.object, config.sim)
    return run_closed_loop(sim, profile, models, job.controller, job.seed, config.filter, trial_id=job.trial_id)


class SlipPipeline:
    """
    Orchestrates one run directory: dataset, models, closed-loop trials and reports.
    Layout: <root>/{dataset,models,trials,report}/.
    """

    def __init__(self, config: ExperimentConfig, run_dir: Union[str, Path]):
        self.config = config
        self.paths = RunPaths(root=Path(run_dir))

    # --- Data and models ---

    def gen_data(self) -> DatasetManifest:
        return gen_dataset(self.config.dataset, self.paths.dataset, self.config.object, self.config.sim)

    def load_dataset(self) -> List[TrialLog]:
        return DatasetLoader(self.paths.dataset).load_trials()

    def train(self, kind: ModelKind) -> TrainOutcome:
        trials = self.load_dataset()
        outcome = fit_on_trials(trials, self.config.filter, self.config.train, kind)
        save_model(outcome.model, self.paths.model_file(kind))
        with open(self.paths.models / f"{kind}.history.json", "w", encoding="utf-8") as f:
            json.dump(outcome.history.model_dump(mode="json"), f, indent=2, sort_keys=True)
        with open(self.paths.models / f"{kind}.eval.json", "w", encoding="utf-8") as f:
            json.dump(outcome.test_report.model_dump(mode="json"), f, indent=2, sort_keys=True)
        logger.info("Model saved", kind=kind, path=str(self.paths.model_file(kind)))
        return outcome

    def evaluate(self, kind: ModelKind) -> EvalReport:
        """Re-scores a saved model on the held-out trials of the dataset split."""
        model = load_model(self.paths.model_file(kind))
        trials = self.load_dataset()
        _, test_idx = split_trials(len(trials), self.config.train.train_fraction, self.config.train.seed)
        batch = windows_from_trials([trials[i] for i in test_idx], self.config.filter)
        return evaluate(model, batch)

    def load_models(self, kind: ControllerKind) -> ModelBundle:
        if kind == "none":
            return ModelBundle()
        model_kind: ModelKind = "detect" if kind == "rsc" else "predict"
        path = self.paths.model_file(model_kind)
        if not path.exists():
            raise FileNotFoundError(f"Model file not found: {path}. Run `train --kind {model_kind}` first.")
        model = load_model(path)
        return ModelBundle(detector=model) if kind == "rsc" else ModelBundle(predictor=model)

    # --- Closed loop ---

    def controller_config(self, kind: ControllerKind, n_basis: Optional[int] = None) -> ControllerConfig:
        data = self.config.controller.model_dump()
        data["kind"] = kind
        if n_basis is not None:
            data["n_basis"] = n_basis
        return ControllerConfig.model_validate(data)

    def profile(self, name: str = "default", v_max: Optional[float] = None) -> ReferenceProfile:
        if v_max is not None:
            return ProfileSpec(v_max=v_max).build()
        return self.config.profile(name)

    def run(
        self,
        kind: ControllerKind,
        seed: int,
        n_basis: Optional[int] = None,
        profile_name: str = "default",
        v_max: Optional[float] = None,
        preset: Optional[str] = None,
        trace: bool = False,
    ) -> TrialLog:
        """One closed-loop trial, written to the trials directory."""
        controller = self.controller_config(kind, n_basis)
        profile = self.profile(profile_name, v_max)
        sim = GraspSimulator(get_preset(preset) if preset else self.config.object, self.config.sim)
        label = f"N{controller.n_basis}-" if kind != "none" else ""
        trial_id = f"{kind}-{label}seed{seed}"
        trace_path = None
        if trace:
            self.paths.report.mkdir(parents=True, exist_ok=True)
            trace_path = self.paths.report / f"{trial_id}.trace.csv"
            trace_path.unlink(missing_ok=True)

        log = run_closed_loop(
            sim, profile, self.load_models(kind), controller, seed, self.config.filter, trace_path, trial_id
        )
        write_trial(log, self.paths.trials)
        logger.info("Trial finished", trial_id=trial_id, dropped=log.dropped, ticks=len(log.records))
        return log

    def _run_jobs(self, jobs: Sequence[TrialJob], profile: ReferenceProfile, workers: int) -> List[TrialLog]:
        bundles = {kind: self.load_models(kind) for kind in sorted({j.controller.kind for j in jobs})}
        if workers == 1:
            return [_run_job(j, profile, bundles[j.controller.kind], self.config) for j in jobs]
        n = len(jobs)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(
                pool.map(
                    _run_job, jobs, [profile] * n, [bundles[j.controller.kind] for j in jobs], [self.config] * n
                )
            )

    def sweep(self) -> List[MetricsRow]:
        """
        Every (kind, N) cell of the sweep, trials seeded by (master, kind, N, i).
        Writes per-trial files, a per-trial metrics CSV and the aggregate table.
        """
        sweep = self.config.sweep
        profile = ProfileSpec(v_max=sweep.v_max).build()
        jobs = [
            TrialJob(
                trial_id=f"sweep-{kind}-N{n}-{i:02d}",
                seed=derive_seed(sweep.seed, kind, n, i),
                controller=self.controller_config(kind, n),
            )
            for kind in sweep.kinds
            for n in sweep.basis_counts
            for i in range(sweep.trials)
        ]
        logger.info("Starting sweep", cells=len(sweep.kinds) * len(sweep.basis_counts), trials=len(jobs))
        logs = self._run_jobs(jobs, profile, sweep.workers)

        metrics: List[TrialMetrics] = []
        for log in logs:
            write_trial(log, self.paths.trials / "sweep")
            metrics.append(compute_metrics(log, profile))
        rows = aggregate_cells(metrics)
        write_rows_csv(metrics, self.paths.report / "sweep_trials.csv", TrialMetrics)
        write_rows_csv(rows, self.paths.report / "sweep.csv", MetricsRow)
        for row in rows:
            logger.info("Sweep cell finished", kind=row.kind, n_basis=row.n_basis, rts=row.rts_mean, drops=row.drops)
        return rows

    def generalize(
        self,
        kind: ControllerKind,
        n_basis: Optional[int] = None,
        trials: int = 5,
        presets: Optional[Sequence[str]] = None,
    ) -> List[GeneralizationRow]:
        """Runs one controller over object presets and tabulates the metrics per object."""
        names = list(presets) if presets else list(OBJECT_PRESETS)
        for name in names:
            get_preset(name)
        controller = self.controller_config(kind, n_basis)
        profile = ProfileSpec(v_max=self.config.sweep.v_max).build()
        jobs = [
            TrialJob(
                trial_id=f"gen-{name}-{kind}-{i:02d}",
                seed=derive_seed(self.config.sweep.seed, name, i),
                controller=controller,
                preset=name,
            )
            for name in names
            for i in range(trials)
        ]
        logs = self._run_jobs(jobs, profile, self.config.sweep.workers)

        rows = []
        for name in names:
            cell = [compute_metrics(log, profile) for job, log in zip(jobs, logs, strict=True) if job.preset == name]
            rows.append(
                GeneralizationRow(
                    object=name,
                    kind=kind,
                    n_basis=controller.n_basis if kind != "none" else 0,
                    mor_mean=mean_std([m.mor for m in cell])[0],
                    rts_mean=mean_std([float(m.rts) for m in cell])[0],
                    drt_mean=mean_std([m.drt for m in cell])[0],
                    rov_mean=rov_summary(cell)[0],
                    drops=sum(m.dropped for m in cell),
                    trials=len(cell),
                )
            )
        write_rows_csv(rows, self.paths.report / f"generalize_{kind}.csv", GeneralizationRow)
        return rows

    def report(self) -> ReportSummary:
        return build_report(self.paths.trials, self.paths.report)


# --- Public API Functions ---


def run_sweep(config: ExperimentConfig, run_dir: Union[str, Path]) -> List[MetricsRow]:
    """Runs the basis-count sweep of `config` against the models in `run_dir`."""
    return SlipPipeline(config, run_dir).sweep()


def closed_loop_trial(
    config: ExperimentConfig, run_dir: Union[str, Path], kind: ControllerKind, seed: int, n_basis: Optional[int] = None
) -> TrialLog:
    return SlipPipeline(config, run_dir).run(kind, seed, n_basis)


__all__ = [
    "RunPaths",
    "SlipPipeline",
    "closed_loop_trial",
    "default_out_root",
    "load_config",
    "run_sweep",
]
