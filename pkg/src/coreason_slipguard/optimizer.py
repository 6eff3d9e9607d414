# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.

"""
Augmented-Lagrangian minimizer for small weight vectors with derivative-free
callbacks.

Inequality constraints g_k(w) <= 0 enter through the penalty
    L = f + sum_k [max(0, lambda_k + rho g_k)^2 - lambda_k^2] / (2 rho);
the box lb <= a.w - offset <= ub on the first planned velocity is enforced
exactly by projection in the inner loop.
"""

import csv
import math
import time
from pathlib import Path
from typing import Callable, List, Literal, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field

from coreason_slipguard.schemas import SolverSettings

FloatArray = npt.NDArray[np.float64]
ScalarFn = Callable[[FloatArray], float]
SolveStatus = Literal["converged", "max_iter", "infeasible"]

ARMIJO_C = 1e-4
BACKTRACK = 0.5
MAX_BACKTRACKS = 30
RHO_GROWTH = 10.0
REQUIRED_DECREASE = 0.25


class OptProblem(BaseModel):
    """
    minimize objective(w) s.t. constraints[k](w) <= 0 and lb <= box_coeff.w - box_offset <= ub.

    `metric` is an optional SPD matrix M approximating the objective's
    curvature (identity when absent). Each inner step is preconditioned by
    M + rho J^T J over the active constraints and projected onto the box in
    that norm. `gradient` replaces the numerical gradient of the objective
    when given.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    objective: ScalarFn
    x0: FloatArray
    constraints: List[ScalarFn] = Field(default_factory=list)
    gradient: Optional[Callable[[FloatArray], FloatArray]] = None
    box_coeff: Optional[FloatArray] = None
    box_offset: float = 0.0
    lb: float = -math.inf
    ub: float = math.inf
    metric: Optional[FloatArray] = None
    settings: SolverSettings = Field(default_factory=SolverSettings)


class TraceRow(BaseModel):
    iteration: int
    objective: float
    violation: float
    grad_norm: float


class SolveResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    w_star: FloatArray
    rov: float = Field(ge=0)
    objective: float
    violations: List[float]
    multipliers: List[float]
    iterations: int
    outer_iterations: int
    status: SolveStatus
    wall_ms: float
    trace: List[TraceRow] = Field(default_factory=list)

    @property
    def max_violation(self) -> float:
        return max(self.violations, default=0.0)


class OracleResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    feasible: bool
    w: Optional[FloatArray] = None
    value: float = math.inf
    n_feasible: int = 0
    n_points: int = 0


def numerical_gradient(f: ScalarFn, w: FloatArray, rel_step: float = 1e-4) -> FloatArray:
    """
    Central differences with step h_j = rel_step * max(1, |w_j|); 2n evaluations.
    """
    w = np.asarray(w, dtype=np.float64)
    grad = np.empty_like(w)
    shifted = w.copy()
    for j in range(w.size):
        h = rel_step * max(1.0, abs(w[j]))
        shifted[j] = w[j] + h
        plus = f(shifted)
        shifted[j] = w[j] - h
        minus = f(shifted)
        shifted[j] = w[j]
        if not (math.isfinite(plus) and math.isfinite(minus)):
            raise ValueError(f"Non-finite function value while differentiating coordinate {j} at w={w.tolist()}")
        grad[j] = (plus - minus) / (2.0 * h)
    return grad


class _Box:
    """Projection onto the slab lb <= a.w - offset <= ub in the norm of the step metric."""

    def __init__(self, problem: OptProblem):
        self.a = problem.box_coeff
        self.lo = problem.lb + problem.box_offset
        self.hi = problem.ub + problem.box_offset

    def project(self, w: FloatArray, hinv: FloatArray) -> FloatArray:
        if self.a is None:
            return w
        value = float(self.a @ w)
        target = min(max(value, self.lo), self.hi)
        if target == value:
            return w
        direction = hinv @ self.a
        return w + ((target - value) / float(self.a @ direction)) * direction

    def residual(self, w: FloatArray, grad: FloatArray) -> float:
        """
        Norm of grad + nu a, with the box multiplier nu chosen by least squares
        and kept at zero unless its side of the box is active with the right sign.
        """
        if self.a is None:
            return float(np.linalg.norm(grad))
        value = float(self.a @ w)
        scale = 1e-9 * max(1.0, abs(value))
        nu = -float(grad @ self.a) / float(self.a @ self.a)
        at_upper = value >= self.hi - scale
        at_lower = value <= self.lo + scale
        if not ((at_upper and nu > 0) or (at_lower and nu < 0)):
            nu = 0.0
        return float(np.linalg.norm(grad + nu * self.a))


class _Iterate(NamedTuple):
    w: FloatArray
    objective: float
    rov: float


def _violations(constraints: Sequence[ScalarFn], w: FloatArray) -> List[float]:
    return [max(0.0, float(g(w))) for g in constraints]


def solve(problem: OptProblem) -> SolveResult:
    """
    Outer loop: minimize L for fixed (lambda, rho), then lambda <- max(0, lambda + rho g)
    and rho grows tenfold (capped) when the violation did not drop below a quarter
    of its previous value.

    Converged when the Lagrangian-gradient norm is <= tol, the worst violation
    is <= ctol and every |lambda_k g_k| is <= ctol. Otherwise (iteration cap or
    time budget) the result is the lowest-objective iterate within ctol of
    feasibility, or the last iterate when none was.
    """
    start = time.perf_counter()
    s = problem.settings
    x0 = np.asarray(problem.x0, dtype=np.float64)
    if x0.ndim != 1 or not np.all(np.isfinite(x0)):
        raise ValueError(f"Initial point must be a finite vector, got {problem.x0}")
    constraints = problem.constraints
    lam = np.zeros(len(constraints))

    def f_grad(w: FloatArray) -> FloatArray:
        if problem.gradient is not None:
            return np.asarray(problem.gradient(w), dtype=np.float64)
        return numerical_gradient(problem.objective, w)

    if problem.lb >= problem.ub:
        viols = _violations(constraints, x0)
        return SolveResult(
            w_star=x0, rov=float(np.linalg.norm(f_grad(x0))), objective=float(problem.objective(x0)),
            violations=viols, multipliers=lam.tolist(), iterations=0, outer_iterations=0,
            status="infeasible", wall_ms=(time.perf_counter() - start) * 1000.0,
        )

    base = np.asarray(problem.metric, dtype=np.float64) if problem.metric is not None else np.eye(x0.size)
    box = _Box(problem)
    deadline = start + s.time_budget_ms / 1000.0 if s.time_budget_ms is not None else math.inf

    rho = s.rho0
    w = box.project(x0, np.linalg.inv(base))
    prev_violation = math.inf
    iterations = 0
    outer = 0
    rov = math.inf
    best: Optional[_Iterate] = None
    trace: List[TraceRow] = []
    status: SolveStatus = "max_iter"

    for outer in range(1, s.max_outer + 1):
        lam_k, rho_k = lam.copy(), rho

        def lagrangian(v: FloatArray) -> float:
            shifted = np.maximum(0.0, lam_k + rho_k * np.array([g(v) for g in constraints]))
            return float(problem.objective(v)) + float(np.sum(shifted**2 - lam_k**2)) / (2.0 * rho_k)

        def local_model(v: FloatArray) -> Tuple[FloatArray, FloatArray]:
            """Gradient of L and the step metric: base plus rho J J^T of the active constraints."""
            grad = f_grad(v)
            curvature = base.copy()
            for k, g in enumerate(constraints):
                weight = max(0.0, lam_k[k] + rho_k * float(g(v)))
                if weight > 0.0:
                    jac = numerical_gradient(g, v)
                    grad = grad + weight * jac
                    curvature += rho_k * np.outer(jac, jac)
            return grad, curvature

        w, grad, used = _inner_minimize(w, lagrangian, local_model, box, s, deadline)
        iterations += used
        rov = box.residual(w, grad)
        g_vals = np.array([float(g(w)) for g in constraints])
        violation = float(np.max(np.maximum(0.0, g_vals), initial=0.0))
        objective = float(problem.objective(w))
        trace.append(TraceRow(iteration=outer, objective=objective, violation=violation, grad_norm=rov))

        lam = np.maximum(0.0, lam + rho * g_vals)
        slackness = float(np.max(np.abs(lam * g_vals), initial=0.0))
        if violation <= s.ctol and (best is None or objective < best.objective):
            best = _Iterate(w.copy(), objective, rov)

        if rov <= s.tol and violation <= s.ctol and slackness <= s.ctol:
            status = "converged"
            break
        if time.perf_counter() > deadline:
            break

        if violation > REQUIRED_DECREASE * prev_violation:
            rho = min(rho * RHO_GROWTH, s.rho_max)
        prev_violation = violation

    if status != "converged" and best is not None:
        w, rov = best.w, best.rov

    return SolveResult(
        w_star=w,
        rov=float(rov),
        objective=float(problem.objective(w)),
        violations=_violations(constraints, w),
        multipliers=lam.tolist(),
        iterations=iterations,
        outer_iterations=outer,
        status=status,
        wall_ms=(time.perf_counter() - start) * 1000.0,
        trace=trace,
    )


def _inner_minimize(
    w: FloatArray,
    lagrangian: ScalarFn,
    local_model: Callable[[FloatArray], Tuple[FloatArray, FloatArray]],
    box: _Box,
    settings: SolverSettings,
    deadline: float,
) -> Tuple[FloatArray, FloatArray, int]:
    """
    Projected, preconditioned gradient descent with Armijo backtracking. Every
    accepted step strictly lowers L.
    """
    value = lagrangian(w)
    grad, curvature = local_model(w)
    used = 0
    for used in range(1, settings.max_inner + 1):
        if box.residual(w, grad) <= settings.tol or time.perf_counter() > deadline:
            return w, grad, used - 1
        hinv = np.linalg.inv(curvature)
        direction = -(hinv @ grad)
        step = 1.0
        for _ in range(MAX_BACKTRACKS):
            candidate = box.project(w + step * direction, hinv)
            candidate_value = lagrangian(candidate)
            if candidate_value <= value + ARMIJO_C * float(grad @ (candidate - w)):
                break
            step *= BACKTRACK
        else:
            return w, grad, used
        if np.array_equal(candidate, w):
            return w, grad, used
        w, value = candidate, candidate_value
        grad, curvature = local_model(w)
    return w, grad, used


def grid_oracle(
    problem: OptProblem, bounds: Tuple[float, float] = (-1.0, 1.0), resolution: int = 200
) -> OracleResult:
    """
    Exhaustive search over a regular grid. Points violating a constraint by more
    than ctol, or the box, are skipped.
    """
    n = int(np.asarray(problem.x0).size)
    if not 1 <= n <= 3:
        raise ValueError(f"grid_oracle supports 1 to 3 weights, got {n}")
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")

    axis = np.linspace(bounds[0], bounds[1], resolution)
    mesh = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1).reshape(-1, n)
    lo = problem.lb + problem.box_offset
    hi = problem.ub + problem.box_offset
    ctol = problem.settings.ctol

    best: Optional[FloatArray] = None
    best_value = math.inf
    n_feasible = 0
    for point in mesh:
        if problem.box_coeff is not None:
            v = float(problem.box_coeff @ point)
            if v < lo - 1e-12 or v > hi + 1e-12:
                continue
        if any(g(point) > ctol for g in problem.constraints):
            continue
        n_feasible += 1
        value = float(problem.objective(point))
        if value < best_value:
            best, best_value = point.copy(), value

    return OracleResult(
        feasible=best is not None, w=best, value=best_value, n_feasible=n_feasible, n_points=int(mesh.shape[0])
    )


def write_trace_csv(rows: Sequence[TraceRow], path: Union[str, Path], tick: Optional[int] = None) -> Path:
    """Appends solver trace rows to a CSV file, writing the header for a new file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fresh = not path.exists()
    with open(path, "a", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        if fresh:
            writer.writerow(["tick", "iteration", "objective", "violation", "grad_norm"])
        for row in rows:
            writer.writerow(["" if tick is None else tick, row.iteration, repr(row.objective),
                             repr(row.violation), repr(row.grad_norm)])
    return path
