# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.

"""
Reactive (RSC) and proactive (PSC) slip control by receding-horizon
trajectory adaptation.

Every tick both controllers optimize the N basis weights of the next T
planned speeds and apply only the first one. RSC shrinks the plan when the
detector reports slip now; PSC keeps the predicted slip probability of the
plan itself below a margin.
"""

import math
import time
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
import numpy.typing as npt
from loguru import logger
from pydantic import BaseModel, ConfigDict

from coreason_slipguard.basis import (
    BasisSpec,
    ReferenceProfile,
    basis_matrix,
    fit_weights,
    path_direction,
    sample_reference_window,
    trajectory_from_weights,
)
from coreason_slipguard.grasp_sim import GraspSimulator
from coreason_slipguard.interfaces import SlipDetector, SlipPredictor
from coreason_slipguard.optimizer import OptProblem, SolveResult, solve, write_trace_csv
from coreason_slipguard.schemas import (
    ACTION_DIM,
    ControllerConfig,
    FilterConfig,
    SolverSettings,
    TickCommand,
    TickRecord,
    TrialLog,
)
from coreason_slipguard.signal_filter import KalmanBank, history_window

FloatArray = npt.NDArray[np.float64]

METRIC_RIDGE = 1e-3
MIN_SOLVE_MS = 0.1


class TickResult(BaseModel):
    """Outcome of one controller step."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    cmd: float
    solve: Optional[SolveResult] = None
    p_slip: Optional[float] = None
    alarm: bool = False
    elapsed_ms: float = 0.0
    status: str
    w_star: Optional[FloatArray] = None


class ModelBundle(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    detector: Optional[SlipDetector] = None
    predictor: Optional[SlipPredictor] = None


def rsc_objective(
    w: FloatArray, phi: FloatArray, ref_window: FloatArray, S: int, a: float, epsilon: float, power: int = 1
) -> float:
    """
    ||Phi^T w - ref||^p + a^(1/(S+eps)) ||Phi^T w||^p.

    With power=1 this is the reactive cost as written; with S=0 the second
    coefficient is a^(1/eps), negligible for small eps.
    """
    if S not in (0, 1):
        raise ValueError(f"S must be 0 or 1, got {S}")
    traj = trajectory_from_weights(phi, w)
    coef = a ** (1.0 / (S + epsilon))
    return float(np.linalg.norm(traj - ref_window) ** power + coef * np.linalg.norm(traj) ** power)


def slip_coefficient(S: int, a: float, epsilon: float) -> float:
    return a ** (1.0 / (S + epsilon))


def actions_from_speeds(traj: FloatArray) -> FloatArray:
    """(T,) path speeds -> (T, 6) action block."""
    direction = np.zeros(ACTION_DIM)
    direction[:2] = path_direction()[:2]
    return np.outer(traj, direction)


def _metric(phi: FloatArray) -> FloatArray:
    """Hessian of ||Phi^T w - ref||^2 with a small ridge."""
    gram = phi @ phi.T
    return 2.0 * (gram + METRIC_RIDGE * (np.trace(gram) / phi.shape[0]) * np.eye(phi.shape[0]))


def initial_weights(phi: FloatArray, ref_window: FloatArray, w_prev: Optional[FloatArray]) -> FloatArray:
    """
    Warm start: the previous plan advanced one tick (its last speed repeated),
    refitted onto the basis. Cold start: the reference fit.
    """
    if w_prev is None:
        return fit_weights(ref_window, phi).w
    traj = trajectory_from_weights(phi, w_prev)
    shifted = np.concatenate([traj[1:], traj[-1:]])
    return fit_weights(shifted, phi).w


def _tracking(phi: FloatArray, ref_window: FloatArray, power: int) -> Callable[[FloatArray], float]:
    def objective(w: FloatArray) -> float:
        return float(np.linalg.norm(phi.T @ w - ref_window) ** power)

    return objective


def tick_settings(config: ControllerConfig, started: float) -> SolverSettings:
    """
    Solver settings for the next solve of a tick that began at `started`
    (perf_counter seconds): the time budget is whatever is left of
    tick_budget_ms, never below MIN_SOLVE_MS.
    """
    if config.tick_budget_ms is None:
        return config.solver
    left = max(config.tick_budget_ms - (time.perf_counter() - started) * 1000.0, MIN_SOLVE_MS)
    if config.solver.time_budget_ms is not None:
        left = min(left, config.solver.time_budget_ms)
    return config.solver.model_copy(update={"time_budget_ms": left})


def _box_problem(
    objective: Callable[[FloatArray], float],
    phi: FloatArray,
    x0: FloatArray,
    observed_speed: float,
    config: ControllerConfig,
    settings: SolverSettings,
    gradient: Optional[Callable[[FloatArray], FloatArray]] = None,
    constraints: Optional[List[Callable[[FloatArray], float]]] = None,
) -> OptProblem:
    return OptProblem(
        objective=objective,
        gradient=gradient,
        x0=x0,
        constraints=constraints or [],
        box_coeff=phi[:, 0].copy(),
        box_offset=observed_speed,
        lb=config.lb,
        ub=config.ub,
        metric=_metric(phi),
        settings=settings,
    )


def rsc_step(
    observed_speed: float,
    window: Optional[FloatArray],
    ref_window: FloatArray,
    detector: SlipDetector,
    config: ControllerConfig,
    phi: FloatArray,
    w_prev: Optional[FloatArray] = None,
) -> TickResult:
    """
    Samples S from the detector once, then minimizes the reactive cost under
    the first-step box. Without a tactile window yet, S = 0.
    """
    started = time.perf_counter()
    p = detector.predict_proba(window) if window is not None else None
    S = int(p is not None and p > config.threshold)
    coef = slip_coefficient(S, config.a, config.epsilon)

    def objective(w: FloatArray) -> float:
        return rsc_objective(w, phi, ref_window, S, config.a, config.epsilon, config.norm_power)

    def squared_gradient(w: FloatArray) -> FloatArray:
        traj = phi.T @ w
        return 2.0 * (phi @ (traj - ref_window)) + 2.0 * coef * (phi @ traj)

    gradient = squared_gradient if config.norm_power == 2 else None

    x0 = initial_weights(phi, ref_window, w_prev if config.warm_start else None)
    settings = tick_settings(config, started)
    result = solve(_box_problem(objective, phi, x0, observed_speed, config, settings, gradient))
    cmd = float(phi[:, 0] @ result.w_star)
    return TickResult(
        cmd=cmd, solve=result, p_slip=p, alarm=bool(S), elapsed_ms=(time.perf_counter() - started) * 1000.0,
        status=result.status, w_star=result.w_star,
    )


def psc_step(
    observed_speed: float,
    window: Optional[FloatArray],
    ref_window: FloatArray,
    predictor: SlipPredictor,
    config: ControllerConfig,
    phi: FloatArray,
    w_prev: Optional[FloatArray] = None,
) -> TickResult:
    """
    Tracks the reference subject to p(window, actions(plan)) - delta_slip <= 0
    and the first-step box. When the margin is unreachable, the tick instead
    minimizes the predicted probability and is flagged "fallback". Both solves
    share the tick budget.
    """
    started = time.perf_counter()
    power = config.norm_power
    objective = _tracking(phi, ref_window, power)

    def squared_gradient(w: FloatArray) -> FloatArray:
        return 2.0 * (phi @ (phi.T @ w - ref_window))

    gradient = squared_gradient if power == 2 else None

    x0 = initial_weights(phi, ref_window, w_prev if config.warm_start else None)

    if window is None:
        settings = tick_settings(config, started)
        result = solve(_box_problem(objective, phi, x0, observed_speed, config, settings, gradient))
        return TickResult(
            cmd=float(phi[:, 0] @ result.w_star), solve=result,
            elapsed_ms=(time.perf_counter() - started) * 1000.0, status=result.status, w_star=result.w_star,
        )

    score = predictor.condition(window)

    def slip_probability(w: FloatArray) -> float:
        return score(actions_from_speeds(phi.T @ w))

    def slip_margin(w: FloatArray) -> float:
        return slip_probability(w) - config.delta_slip

    alarm = score(actions_from_speeds(ref_window)) > config.threshold
    settings = tick_settings(config, started)
    result = solve(_box_problem(objective, phi, x0, observed_speed, config, settings, gradient, [slip_margin]))
    status: str = result.status

    if result.max_violation > config.solver.ctol:
        logger.warning("Slip margin unreachable; minimizing slip probability", violation=result.max_violation)
        settings = tick_settings(config, started)
        result = solve(_box_problem(slip_probability, phi, result.w_star, observed_speed, config, settings))
        status = "fallback"

    return TickResult(
        cmd=float(phi[:, 0] @ result.w_star),
        solve=result,
        p_slip=slip_probability(result.w_star),
        alarm=bool(alarm),
        elapsed_ms=(time.perf_counter() - started) * 1000.0,
        status=status,
        w_star=result.w_star,
    )


class RecedingHorizonController:
    """
    Closed-loop RSC or PSC controller for one trial at a time.

    Keeps its own per-channel Kalman filters over the tactile readings it has
    seen and the previous plan for warm starts.
    """

    def __init__(
        self,
        config: ControllerConfig,
        profile: ReferenceProfile,
        models: ModelBundle,
        filter_config: Optional[FilterConfig] = None,
        trace_path: Optional[Union[str, Path]] = None,
    ):
        if config.kind == "none":
            raise ValueError("RecedingHorizonController needs kind 'rsc' or 'psc'")
        if config.kind == "rsc" and models.detector is None:
            raise ValueError("RSC needs a slip detector")
        if config.kind == "psc":
            if models.predictor is None:
                raise ValueError("PSC needs a slip predictor")
            horizon = getattr(models.predictor, "horizon", config.horizon)
            if horizon != config.horizon:
                raise ValueError(f"Predictor horizon {horizon} does not match controller horizon {config.horizon}")

        self.config = config
        self.kind = config.kind
        self.n_basis: Optional[int] = config.n_basis
        self.profile = profile
        self.models = models
        self.filter_config = filter_config or FilterConfig(horizon=config.horizon)
        self.trace_path = Path(trace_path) if trace_path is not None else None
        self.phi = basis_matrix(BasisSpec.equally_spaced(config.n_basis, config.horizon, config.sigma))
        self._bank = KalmanBank(self.filter_config.q_process, self.filter_config.r_measure)
        self.reset()

    def reset(self) -> None:
        self._bank.reset()
        self._filtered: List[FloatArray] = []
        self._w_prev: Optional[FloatArray] = None

    def _window(self, history: Sequence[TickRecord]) -> Optional[FloatArray]:
        for record in history[len(self._filtered) :]:
            self._filtered.append(self._bank.update(np.asarray(record.tactile, dtype=np.float64)))
        if not self._filtered:
            return None
        return history_window(np.stack(self._filtered), len(self._filtered) - 1, self.filter_config.context)

    def step(self, tick: int, history: Sequence[TickRecord]) -> TickResult:
        observed = history[-1].speed if history else 0.0
        window = self._window(history)
        ref_window = sample_reference_window(self.profile, tick + 1, self.config.horizon)
        if self.kind == "rsc":
            assert self.models.detector is not None
            return rsc_step(observed, window, ref_window, self.models.detector, self.config, self.phi, self._w_prev)
        assert self.models.predictor is not None
        return psc_step(observed, window, ref_window, self.models.predictor, self.config, self.phi, self._w_prev)

    def decide(self, tick: int, history: Sequence[TickRecord]) -> TickCommand:
        """
        One controller step. Failures hold the previous command, clipped to
        the box around the observed speed, and mark the tick "error".
        """
        try:
            result = self.step(tick, history)
        except Exception as e:
            observed = history[-1].speed if history else 0.0
            held = history[-1].cmd if history else 0.0
            held = min(max(held, observed + self.config.lb), observed + self.config.ub)
            logger.warning("Controller step failed; holding command", tick=tick, error=str(e))
            return TickCommand(cmd=held, status="error")

        if self.config.warm_start:
            self._w_prev = result.w_star
        if self.trace_path is not None and result.solve is not None:
            write_trace_csv(result.solve.trace, self.trace_path, tick=tick)
        logger.debug("Controller tick", kind=self.kind, tick=tick, cmd=result.cmd, status=result.status)
        return TickCommand(
            cmd=result.cmd,
            p_slip=result.p_slip,
            rov=result.solve.rov if result.solve is not None and math.isfinite(result.solve.rov) else None,
            status=result.status,
            alarm=int(result.alarm),
        )


def run_closed_loop(
    sim: GraspSimulator,
    profile: ReferenceProfile,
    models: ModelBundle,
    config: ControllerConfig,
    seed: int,
    filter_config: Optional[FilterConfig] = None,
    trace_path: Optional[Union[str, Path]] = None,
    trial_id: Optional[str] = None,
) -> TrialLog:
    """
    Runs one trial with the configured controller. kind='none' is the plain
    uncontrolled trial.
    """
    if config.kind == "none":
        return sim.run(profile, controller=None, seed=seed, trial_id=trial_id)
    controller = RecedingHorizonController(config, profile, models, filter_config, trace_path)
    return sim.run(profile, controller=controller, seed=seed, trial_id=trial_id)
