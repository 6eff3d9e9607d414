# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.

"""
Report building: per-trial metrics, the per-cell aggregate table computed in
DuckDB over the metrics CSV, and long-format rotation/velocity traces for
external plotting.
"""

import csv
from pathlib import Path
from typing import List, Sequence, Union

import duckdb
from loguru import logger
from pydantic import BaseModel

from coreason_slipguard.basis import ReferenceProfile
from coreason_slipguard.dataset import read_trial
from coreason_slipguard.metrics import compute_metrics, read_rows_csv, reference_at_ticks, write_rows_csv
from coreason_slipguard.schemas import MetricsRow, TrialLog, TrialMetrics

TRACE_COLUMNS = ["trial_id", "kind", "n_basis", "tick", "t", "theta", "cmd", "ref", "speed", "slip", "p_slip"]

_AGGREGATE_SQL = """
    SELECT
        kind,
        n_basis,
        avg(rov) FILTER (WHERE rov_ticks > 0) AS rov_mean,
        stddev_pop(rov) FILTER (WHERE rov_ticks > 0) AS rov_std,
        avg(mor) AS mor_mean, stddev_pop(mor) AS mor_std,
        avg(et_ms) AS et_mean, stddev_pop(et_ms) AS et_std,
        avg(rts) AS rts_mean, stddev_pop(rts) AS rts_std,
        avg(drt) AS drt_mean, stddev_pop(drt) AS drt_std,
        CAST(sum(CAST(dropped AS INTEGER)) AS INTEGER) AS drops,
        CAST(count(*) AS INTEGER) AS trials
    FROM read_csv('{path}', header = true, columns = {{
        'trial_id': 'VARCHAR', 'kind': 'VARCHAR', 'n_basis': 'INTEGER', 'seed': 'BIGINT',
        'rov': 'DOUBLE', 'rov_ticks': 'INTEGER', 'mor': 'DOUBLE', 'et_ms': 'DOUBLE',
        'rts': 'INTEGER', 'drt': 'DOUBLE',
        'dropped': 'BOOLEAN', 'first_alarm_tick': 'INTEGER'
    }})
    GROUP BY kind, n_basis
    ORDER BY kind, n_basis
"""


class ReportSummary(BaseModel):
    trial_metrics: Path
    table: Path
    traces: Path
    rows: List[MetricsRow]


def aggregate_csv(trial_metrics_csv: Union[str, Path]) -> List[MetricsRow]:
    """Aggregates a per-trial metrics CSV into one MetricsRow per (kind, n_basis)."""
    path = Path(trial_metrics_csv)
    if not path.exists():
        raise FileNotFoundError(f"Metrics file not found: {path}")
    con = duckdb.connect()
    try:
        cursor = con.execute(_AGGREGATE_SQL.format(path=str(path).replace("'", "''")))
        columns = [d[0] for d in cursor.description]
        rows = cursor.fetchall()
    finally:
        con.close()
    return [MetricsRow(**{c: (0.0 if v is None else v) for c, v in zip(columns, row, strict=True)}) for row in rows]


def write_traces(logs: Sequence[TrialLog], profiles: Sequence[ReferenceProfile], path: Union[str, Path]) -> Path:
    """One row per (trial, tick) in long format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(TRACE_COLUMNS)
        for log, profile in zip(logs, profiles, strict=True):
            ref = reference_at_ticks(profile, len(log.records))
            for k, rec in enumerate(log.records):
                writer.writerow([
                    log.meta.trial_id, log.meta.controller, log.meta.n_basis or 0, k, repr(rec.t),
                    repr(rec.theta), repr(rec.cmd), repr(float(ref[k])), repr(rec.speed), rec.slip,
                    "" if rec.p_slip is None else repr(rec.p_slip),
                ])
    return path


def build_report(trials_dir: Union[str, Path], report_dir: Union[str, Path]) -> ReportSummary:
    """Reads every trial under trials_dir and writes metrics, table and traces to report_dir."""
    trials_dir = Path(trials_dir)
    report_dir = Path(report_dir)
    paths = sorted(trials_dir.rglob("*.jsonl"))
    if not paths:
        raise FileNotFoundError(f"No trial files found in {trials_dir}")

    logs = [read_trial(p) for p in paths]
    profiles = [ReferenceProfile.from_json_dict(log.meta.profile) for log in logs]
    metrics = [compute_metrics(log, profile) for log, profile in zip(logs, profiles, strict=True)]

    metrics_path = write_rows_csv(metrics, report_dir / "trial_metrics.csv", TrialMetrics)
    rows = aggregate_csv(metrics_path)
    table_path = write_rows_csv(rows, report_dir / "table.csv", MetricsRow)
    traces_path = write_traces(logs, profiles, report_dir / "traces.csv")
    logger.info("Report written", trials=len(logs), rows=len(rows), path=str(report_dir))
    return ReportSummary(trial_metrics=metrics_path, table=table_path, traces=traces_path, rows=rows)


def load_table(path: Union[str, Path]) -> List[MetricsRow]:
    return read_rows_csv(path, MetricsRow)
