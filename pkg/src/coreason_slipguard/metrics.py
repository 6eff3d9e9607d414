# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.

import csv
import math
from pathlib import Path
from typing import List, Sequence, Tuple, Type, TypeVar, Union

import numpy as np
from pydantic import BaseModel

from coreason_slipguard.basis import ReferenceProfile
from coreason_slipguard.schemas import SLIP_THRESHOLD_DEG, MetricsRow, TrialLog, TrialMetrics

RowT = TypeVar("RowT", bound=BaseModel)


def reference_at_ticks(profile: ReferenceProfile, n_ticks: int) -> np.ndarray:
    """Reference speed for each tick's command: sample k+1, zero past the profile."""
    ref = np.zeros(n_ticks)
    samples = np.asarray(profile.samples[1 : n_ticks + 1])
    ref[: samples.size] = samples
    return ref


def compute_metrics(log: TrialLog, profile: ReferenceProfile) -> TrialMetrics:
    """
    MOR: max |theta| (deg). RTS: ticks with |theta| > 6 deg. DRT: sum of
    |cmd - ref| over ticks. ET: mean controller ms per tick. ROV: mean solver
    residual over converged ticks; 0.0 with rov_ticks=0 when none converged.
    """
    theta = np.abs(log.column("theta"))
    cmd = log.column("cmd")
    ref = reference_at_ticks(profile, len(log.records))

    et = [r.et_ms for r in log.records if r.et_ms is not None]
    converged = [r.rov for r in log.records if r.rov is not None and r.status == "converged"]
    first_alarm = next((k for k, r in enumerate(log.records) if r.alarm == 1), -1)

    return TrialMetrics(
        trial_id=log.meta.trial_id,
        kind=log.meta.controller,
        n_basis=log.meta.n_basis or 0,
        seed=log.meta.seed,
        rov=float(np.mean(converged)) if converged else 0.0,
        rov_ticks=len(converged),
        mor=float(theta.max()) if theta.size else 0.0,
        et_ms=float(np.mean(et)) if et else 0.0,
        rts=int(np.sum(theta > SLIP_THRESHOLD_DEG)),
        drt=float(np.sum(np.abs(cmd - ref))),
        dropped=log.dropped,
        first_alarm_tick=first_alarm,
    )


def welford(values: Sequence[float]) -> Tuple[float, float]:
    """One-pass mean and population standard deviation."""
    n = 0
    mean = 0.0
    m2 = 0.0
    for x in values:
        n += 1
        delta = x - mean
        mean += delta / n
        m2 += delta * (x - mean)
    if n == 0:
        raise ValueError("welford needs at least one value")
    return mean, math.sqrt(max(m2 / n, 0.0))


def mean_std(values: Sequence[float]) -> Tuple[float, float]:
    """Two-pass mean and population standard deviation."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("mean_std needs at least one value")
    return float(arr.mean()), float(arr.std(ddof=0))


def rov_summary(metrics: Sequence[TrialMetrics]) -> Tuple[float, float]:
    """Mean and population std of ROV over the trials with at least one converged tick; (0, 0) without any."""
    solved = [m.rov for m in metrics if m.rov_ticks > 0]
    return mean_std(solved) if solved else (0.0, 0.0)


def aggregate(metrics: Sequence[TrialMetrics]) -> MetricsRow:
    """Mean and population std of one (kind, n_basis) cell."""
    if not metrics:
        raise ValueError("Cannot aggregate an empty cell")
    cells = {(m.kind, m.n_basis) for m in metrics}
    if len(cells) != 1:
        raise ValueError(f"Metrics from several cells: {sorted(cells)}")

    fields = {}
    for name, attr in (("mor", "mor"), ("et", "et_ms"), ("rts", "rts"), ("drt", "drt")):
        mean, std = mean_std([float(getattr(m, attr)) for m in metrics])
        fields[f"{name}_mean"] = mean
        fields[f"{name}_std"] = std
    fields["rov_mean"], fields["rov_std"] = rov_summary(metrics)

    return MetricsRow(
        kind=metrics[0].kind,
        n_basis=metrics[0].n_basis,
        drops=sum(m.dropped for m in metrics),
        trials=len(metrics),
        **fields,
    )


def aggregate_cells(metrics: Sequence[TrialMetrics]) -> List[MetricsRow]:
    """One row per (kind, n_basis), sorted."""
    keys = sorted({(m.kind, m.n_basis) for m in metrics})
    return [aggregate([m for m in metrics if (m.kind, m.n_basis) == key]) for key in keys]


def _cell(value: object) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


def write_rows_csv(rows: Sequence[BaseModel], path: Union[str, Path], row_type: Type[BaseModel]) -> Path:
    """Header row plus one line per model; floats keep full precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(row_type.model_fields)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(getattr(row, c)) for c in columns])
    return path


def read_rows_csv(path: Union[str, Path], row_type: Type[RowT]) -> List[RowT]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"CSV file not found: {path}")
    with open(path, "r", newline="", encoding="utf-8") as f:
        return [row_type.model_validate(record) for record in csv.DictReader(f)]
