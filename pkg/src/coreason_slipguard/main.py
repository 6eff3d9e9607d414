# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.

import sys
from enum import Enum
from pathlib import Path
from typing import Annotated, List, Optional

import typer
from loguru import logger

from coreason_slipguard import __version__
from coreason_slipguard.pipeline import SlipPipeline, default_out_root, load_config
from coreason_slipguard.utils.logger import attach_run_log

app = typer.Typer(
    name="slipguard",
    help="CLI for coreason-slipguard: slip-avoidance control for robotic grasps.",
    add_completion=False,
)


class ModelChoice(str, Enum):
    detect = "detect"
    predict = "predict"


class ControllerChoice(str, Enum):
    none = "none"
    rsc = "rsc"
    psc = "psc"


def _pipeline(ctx: typer.Context) -> SlipPipeline:
    pipeline = ctx.obj
    if not isinstance(pipeline, SlipPipeline):  # pragma: no cover
        raise RuntimeError("Pipeline not initialized")
    return pipeline


@app.callback()
def setup(
    ctx: typer.Context,
    config: Annotated[Optional[Path], typer.Option("--config", "-c", help="Experiment config JSON")] = None,
    seed: Annotated[Optional[int], typer.Option("--seed", help="Master seed override")] = None,
    out: Annotated[Optional[Path], typer.Option("--out", "-o", help="Output root")] = None,
    run_id: Annotated[str, typer.Option("--run-id", help="Run directory name under the output root")] = "default",
) -> None:
    """
    Load the experiment config and select the run directory.
    """
    try:
        experiment = load_config(config)
        if seed is not None:
            experiment = experiment.with_seed(seed)
    except Exception:
        logger.exception("Config Load Failed")
        sys.exit(1)
    pipeline = SlipPipeline(experiment, (out or default_out_root()) / run_id)
    ctx.obj = pipeline
    if ctx.invoked_subcommand != "version":
        handler_id = attach_run_log(pipeline.paths.root)
        ctx.call_on_close(lambda: logger.remove(handler_id))


@app.command("gen-data")
def gen_data(
    ctx: typer.Context,
    trials: Annotated[Optional[int], typer.Option("--trials", "-n", help="Number of trials", min=1)] = None,
    workers: Annotated[Optional[int], typer.Option("--workers", "-w", help="Worker processes", min=1)] = None,
) -> None:
    """
    Simulate the training dataset.
    """
    pipeline = _pipeline(ctx)
    try:
        update = {k: v for k, v in {"n_trials": trials, "workers": workers}.items() if v is not None}
        if update:
            pipeline.config.dataset = pipeline.config.dataset.model_validate(
                {**pipeline.config.dataset.model_dump(), **update}
            )
        manifest = pipeline.gen_data()
        typer.echo(manifest.model_dump_json(indent=2, exclude={"checksums"}))
    except Exception:
        logger.exception("Dataset Generation Failed")
        sys.exit(1)


@app.command()
def train(
    ctx: typer.Context,
    kind: Annotated[ModelChoice, typer.Option("--kind", "-k", help="Model to train")],
) -> None:
    """
    Train the slip detector or predictor on the generated dataset.
    """
    try:
        outcome = _pipeline(ctx).train(kind.value)
        typer.echo(outcome.test_report.model_dump_json(indent=2))
    except Exception:
        logger.exception("Training Failed")
        sys.exit(1)


@app.command("eval")
def eval_model(
    ctx: typer.Context,
    kind: Annotated[ModelChoice, typer.Option("--kind", "-k", help="Model to evaluate")],
) -> None:
    """
    Score a saved model on the held-out trials.
    """
    try:
        report = _pipeline(ctx).evaluate(kind.value)
        typer.echo(report.model_dump_json(indent=2))
    except Exception:
        logger.exception("Evaluation Failed")
        sys.exit(1)


@app.command()
def run(
    ctx: typer.Context,
    controller: Annotated[ControllerChoice, typer.Option("--controller", help="Controller")] = ControllerChoice.psc,
    n_basis: Annotated[Optional[int], typer.Option("--n-basis", "-N", help="Number of basis functions")] = None,
    trial_seed: Annotated[int, typer.Option("--trial-seed", help="Trial seed")] = 0,
    v_max: Annotated[Optional[float], typer.Option("--v-max", help="Peak reference speed (m/s)")] = None,
    profile: Annotated[str, typer.Option("--profile", help="Named reference profile")] = "default",
    preset: Annotated[Optional[str], typer.Option("--preset", help="Object preset")] = None,
    trace: Annotated[bool, typer.Option("--trace", help="Write solver iterations to CSV")] = False,
) -> None:
    """
    Run one closed-loop trial.
    """
    try:
        log = _pipeline(ctx).run(controller.value, trial_seed, n_basis, profile, v_max, preset, trace)
        typer.echo(f"{log.meta.trial_id}: ticks={len(log.records)} dropped={log.dropped}")
    except Exception:
        logger.exception("Trial Failed")
        sys.exit(1)


@app.command()
def sweep(
    ctx: typer.Context,
    trials: Annotated[Optional[int], typer.Option("--trials", "-n", help="Trials per cell", min=1)] = None,
    workers: Annotated[Optional[int], typer.Option("--workers", "-w", help="Worker processes", min=1)] = None,
) -> None:
    """
    Sweep the number of basis functions for both controllers.
    """
    pipeline = _pipeline(ctx)
    try:
        update = {k: v for k, v in {"trials": trials, "workers": workers}.items() if v is not None}
        if update:
            pipeline.config.sweep = pipeline.config.sweep.model_validate(
                {**pipeline.config.sweep.model_dump(), **update}
            )
        for row in pipeline.sweep():
            typer.echo(row.model_dump_json())
    except Exception:
        logger.exception("Sweep Failed")
        sys.exit(1)


@app.command()
def generalize(
    ctx: typer.Context,
    controller: Annotated[ControllerChoice, typer.Option("--controller", help="Controller")] = ControllerChoice.psc,
    n_basis: Annotated[Optional[int], typer.Option("--n-basis", "-N", help="Number of basis functions")] = None,
    trials: Annotated[int, typer.Option("--trials", "-n", help="Trials per object", min=1)] = 5,
    preset: Annotated[Optional[List[str]], typer.Option("--preset", help="Object preset (repeatable)")] = None,
) -> None:
    """
    Run one controller across object presets.
    """
    try:
        for row in _pipeline(ctx).generalize(controller.value, n_basis, trials, preset):
            typer.echo(row.model_dump_json())
    except Exception:
        logger.exception("Generalization Failed")
        sys.exit(1)


@app.command()
def report(ctx: typer.Context) -> None:
    """
    Aggregate every trial of the run into metric tables and traces.
    """
    try:
        summary = _pipeline(ctx).report()
        for row in summary.rows:
            typer.echo(row.model_dump_json())
        typer.echo(f"Table written to {summary.table}")
    except Exception:
        logger.exception("Report Failed")
        sys.exit(1)


@app.command()
def version() -> None:
    """Print the version of coreason-slipguard."""
    typer.echo(f"coreason-slipguard v{__version__}")


def main() -> None:
    """Entry point for the CLI."""
    app()


if __name__ == "__main__":
    main()  # pragma: no cover
