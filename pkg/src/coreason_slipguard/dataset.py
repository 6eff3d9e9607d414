# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.

import hashlib
import json
import shutil
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np
from loguru import logger
from pydantic import BaseModel

from coreason_slipguard.basis import default_profile
from coreason_slipguard.grasp_sim import run_trial
from coreason_slipguard.schemas import (
    DatasetConfig,
    DatasetManifest,
    ObjectParams,
    SimConfig,
    TickRecord,
    TrialLog,
)
from coreason_slipguard.utils.seeding import derive_seed

MANIFEST_NAME = "manifest.json"
HEADER_SUFFIX = ".header.json"


class TrialPlan(BaseModel):
    """One uncontrolled dataset trial: its object, speed and seed."""

    trial_id: str
    seed: int
    v_max: float
    params: ObjectParams


def _sha256(path: Path) -> str:
    sha256 = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(4096), b""):
            sha256.update(block)
    return sha256.hexdigest()


def header_path(jsonl_path: Path) -> Path:
    return jsonl_path.with_name(jsonl_path.stem + HEADER_SUFFIX)


def write_trial(log: TrialLog, directory: Union[str, Path]) -> Path:
    """
    Writes a trial as JSON lines (one record per tick) plus a sidecar header.

    Floats are written with their shortest round-trip representation, so
    read_trial(write_trial(log)) reproduces every value bit for bit.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{log.meta.trial_id}.jsonl"
    try:
        with open(path, "w", encoding="utf-8") as f:
            for record in log.records:
                f.write(json.dumps(record.model_dump(exclude_none=True)) + "\n")
        header = log.model_dump(mode="json", exclude={"records"})
        with open(header_path(path), "w", encoding="utf-8") as f:
            json.dump(header, f, indent=2, sort_keys=True)
    except OSError as e:
        raise RuntimeError(f"Failed to write trial file {path}: {e}") from e
    return path


def read_trial(path: Union[str, Path]) -> TrialLog:
    path = Path(path)
    head = header_path(path)
    for p in (path, head):
        if not p.exists():
            raise FileNotFoundError(f"Trial file not found: {p}")

    try:
        with open(head, "r", encoding="utf-8") as f:
            header: Dict[str, Any] = json.load(f)
        with open(path, "r", encoding="utf-8") as f:
            records = [TickRecord.model_validate(json.loads(line)) for line in f if line.strip()]
    except json.JSONDecodeError as e:
        raise ValueError(f"Invalid JSON in trial {path}: {e}") from e

    return TrialLog.model_validate({**header, "records": records})


def _simulate(plan: TrialPlan, sim: SimConfig) -> TrialLog:
    profile = default_profile(plan.v_max, dt=sim.dt)
    return run_trial(profile, plan.params, seed=plan.seed, sim=sim, trial_id=plan.trial_id)


class DatasetBuilder:
    """
    Generates the uncontrolled-motion dataset: one JSON-lines file per trial,
    a header per trial and a manifest with checksums and class balance.
    """

    def __init__(
        self,
        output_dir: Union[str, Path],
        config: DatasetConfig,
        params: ObjectParams | None = None,
        sim: SimConfig | None = None,
    ):
        self.output_dir = Path(output_dir)
        self.config = config
        self.params = params or ObjectParams()
        self.sim = sim or SimConfig()

    def plan_trials(self) -> List[TrialPlan]:
        """
        Cycles through the v_max grid and draws mass and friction per trial.
        Each trial's draws depend only on the master seed and its index.
        """
        cfg = self.config
        plans = []
        for i in range(cfg.n_trials):
            rng = np.random.default_rng(derive_seed(cfg.seed, "object", i))
            mass = float(rng.uniform(*cfg.mass_range))
            friction = float(rng.uniform(*cfg.friction_range))
            params = self.params.with_mass(mass).model_copy(update={"friction_coeff": friction})
            plans.append(
                TrialPlan(
                    trial_id=f"trial-{i:04d}",
                    seed=derive_seed(cfg.seed, "sim", i),
                    v_max=cfg.v_max_grid[i % len(cfg.v_max_grid)],
                    params=params,
                )
            )
        return plans

    def _run(self, plans: List[TrialPlan]) -> List[TrialLog]:
        if self.config.workers == 1:
            return [_simulate(p, self.sim) for p in plans]
        with ProcessPoolExecutor(max_workers=self.config.workers) as pool:
            return list(pool.map(_simulate, plans, [self.sim] * len(plans)))

    def build(self) -> DatasetManifest:
        """
        Runs every trial and writes the dataset. A failed build leaves no
        partial dataset behind.
        """
        if self.output_dir.exists():
            shutil.rmtree(self.output_dir)
        self.output_dir.mkdir(parents=True)

        logger.info("Generating dataset", path=str(self.output_dir), n_trials=self.config.n_trials)
        try:
            logs = self._run(self.plan_trials())
            checksums: Dict[str, str] = {}
            n_ticks = 0
            n_slip = 0
            for log in logs:
                path = write_trial(log, self.output_dir)
                checksums[path.name] = _sha256(path)
                checksums[header_path(path).name] = _sha256(header_path(path))
                n_ticks += len(log.records)
                n_slip += sum(r.slip for r in log.records)

            manifest = DatasetManifest(
                n_trials=len(logs),
                seed=self.config.seed,
                config=self.config,
                n_ticks=n_ticks,
                n_slip_ticks=n_slip,
                slip_fraction=n_slip / n_ticks if n_ticks else 0.0,
                checksums=checksums,
            )
            with open(self.output_dir / MANIFEST_NAME, "w", encoding="utf-8") as f:
                json.dump(manifest.model_dump(mode="json"), f, indent=2, sort_keys=True)
        except Exception as e:
            logger.error(f"Failed to build dataset: {e}")
            shutil.rmtree(self.output_dir, ignore_errors=True)
            raise RuntimeError(f"Dataset build failed: {e}") from e

        logger.info(
            "Dataset complete",
            n_trials=manifest.n_trials,
            n_ticks=n_ticks,
            slip_fraction=round(manifest.slip_fraction, 4),
        )
        return manifest


def gen_dataset(
    config: DatasetConfig,
    output_dir: Union[str, Path],
    params: ObjectParams | None = None,
    sim: SimConfig | None = None,
) -> DatasetManifest:
    return DatasetBuilder(output_dir, config, params, sim).build()


class DatasetLoader:
    """
    Loads a generated dataset after verifying it against its manifest.
    """

    def __init__(self, dataset_dir: Union[str, Path]):
        self.dataset_dir = Path(dataset_dir)
        if not self.dataset_dir.exists():
            raise FileNotFoundError(f"Dataset not found at: {self.dataset_dir}")
        self.manifest_path = self.dataset_dir / MANIFEST_NAME
        self.manifest: DatasetManifest | None = None

    def load_manifest(self) -> DatasetManifest:
        if not self.manifest_path.exists():
            raise FileNotFoundError(f"Manifest not found at: {self.manifest_path}")
        try:
            with open(self.manifest_path, "r", encoding="utf-8") as f:
                data = json.load(f)
            self.manifest = DatasetManifest(**data)
        except json.JSONDecodeError as e:
            raise ValueError(f"Invalid JSON in manifest: {e}") from e
        except Exception as e:
            raise ValueError(f"Failed to parse manifest: {e}") from e
        return self.manifest

    def verify_integrity(self) -> bool:
        """
        Checks every file listed in the manifest. Raises ValueError on a
        checksum mismatch, a path outside the dataset or a symlink.
        """
        manifest = self.manifest or self.load_manifest()
        root = self.dataset_dir.resolve()

        for filename, expected in manifest.checksums.items():
            file_path = self.dataset_dir / filename
            if not file_path.resolve().is_relative_to(root):
                raise ValueError(f"Security Violation: Path traversal detected in {filename}")
            if file_path.is_symlink():
                raise ValueError(f"Security Violation: Symlinks not allowed for {filename}")
            if not file_path.exists():
                raise FileNotFoundError(f"Trial file not found: {file_path}")
            actual = _sha256(file_path)
            if actual != expected:
                logger.error(f"Checksum mismatch for {filename}. Expected {expected}, got {actual}")
                raise ValueError(f"Integrity check failed for {filename}")

        logger.info("Dataset integrity check passed", n_files=len(manifest.checksums))
        return True

    def trial_paths(self) -> List[Path]:
        manifest = self.manifest or self.load_manifest()
        return sorted(self.dataset_dir / name for name in manifest.checksums if name.endswith(".jsonl"))

    def load_trials(self) -> List[TrialLog]:
        self.verify_integrity()
        return [read_trial(p) for p in self.trial_paths()]

    def class_balance(self) -> Tuple[int, int]:
        """(slip ticks, total ticks) as recorded in the manifest."""
        manifest = self.manifest or self.load_manifest()
        return manifest.n_slip_ticks, manifest.n_ticks
