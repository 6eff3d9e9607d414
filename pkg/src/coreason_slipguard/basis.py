# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.

"""
Gaussian radial-basis parameterization of velocity trajectories and the
trapezoidal reference profiles they track.

Velocities are scalar speeds along a fixed straight-line path in the
horizontal plane; the path direction is constant for the whole motion.
"""

import math
from typing import List, Optional, Tuple

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, model_validator

# Speed values along the path, m/s. Plain arrays keep the optimizer's inner loop cheap.
WeightVector = npt.NDArray[np.float64]
VelocityTrajectory = npt.NDArray[np.float64]

CONTROL_RATE_HZ = 30.0
CONTROL_DT = 1.0 / CONTROL_RATE_HZ

PATH_START: Tuple[float, float, float] = (0.4, 0.25, 0.3)
PATH_END: Tuple[float, float, float] = (0.1, -0.25, 0.3)
PATH_DISPLACEMENT = math.dist(PATH_START, PATH_END)

CRUISE_BISECTIONS = 200


def path_direction() -> npt.NDArray[np.float64]:
    """Unit vector (x, y, z) of the straight-line motion."""
    delta = np.subtract(PATH_END, PATH_START, dtype=np.float64)
    return delta / np.linalg.norm(delta)


class BasisSpec(BaseModel):
    """
    Layout of the Gaussian bumps.

    sigma is in squared time-step units: phi_j(t) = exp(-(t - mu_j)^2 / (2 * sigma)).
    """

    model_config = ConfigDict(frozen=True)

    n_basis: int = Field(ge=1)
    horizon: int = Field(ge=2)
    mu: Tuple[float, ...]
    sigma: float = Field(gt=0)

    @model_validator(mode="after")
    def _check_centers(self) -> "BasisSpec":
        if len(self.mu) != self.n_basis:
            raise ValueError(f"mu has {len(self.mu)} centers, expected n_basis={self.n_basis}")
        if not all(math.isfinite(m) for m in self.mu):
            raise ValueError("mu must be finite")
        if any(b <= a for a, b in zip(self.mu, self.mu[1:], strict=False)):
            raise ValueError("mu must be strictly increasing")
        return self

    @classmethod
    def equally_spaced(cls, n_basis: int, horizon: int, sigma: Optional[float] = None) -> "BasisSpec":
        """
        Centers at mu_j = 1 + (j - 1)(T - 1)/(N - 1), endpoints inclusive.
        sigma defaults to the squared center spacing.
        """
        if not 2 <= n_basis <= 8:
            raise ValueError(f"n_basis must be in [2, 8], got {n_basis}")
        if horizon < 2:
            raise ValueError(f"horizon must be >= 2, got {horizon}")
        spacing = (horizon - 1) / (n_basis - 1)
        mu = tuple(1.0 + j * spacing for j in range(n_basis))
        return cls(n_basis=n_basis, horizon=horizon, mu=mu, sigma=spacing**2 if sigma is None else sigma)


class WeightFit(BaseModel):
    """Least-squares fit of basis weights to a velocity sequence."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    w: WeightVector
    residual_norm: float
    rank: int
    rank_deficient: bool


class ReferenceProfile(BaseModel):
    """
    Trapezoidal speed reference sampled at the control period.

    samples[i] is the reference speed at time i * dt; the first and last samples are 0.
    """

    model_config = ConfigDict(frozen=True)

    v_max: float = Field(gt=0)
    t_accel: float = Field(gt=0)
    t_cruise: float = Field(ge=0)
    t_decel: float = Field(gt=0)
    dt: float = Field(gt=0)
    displacement: float = Field(gt=0)
    samples: Tuple[float, ...] = Field(exclude=True)

    @property
    def duration(self) -> float:
        return self.t_accel + self.t_cruise + self.t_decel

    def to_json_dict(self) -> dict[str, float]:
        """The six defining parameters; samples are regenerated on load."""
        return {k: float(v) for k, v in self.model_dump().items()}

    @classmethod
    def from_json_dict(cls, data: dict[str, float]) -> "ReferenceProfile":
        profile = trapezoid_profile(
            v_max=data["v_max"],
            displacement=data["displacement"],
            t_accel=data["t_accel"],
            t_decel=data["t_decel"],
            dt=data["dt"],
        )
        if not math.isclose(profile.t_cruise, data["t_cruise"], rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(f"Inconsistent t_cruise {data['t_cruise']} (expected {profile.t_cruise})")
        return profile


def eval_basis(spec: BasisSpec, t: float) -> npt.NDArray[np.float64]:
    """Returns [phi_1(t) ... phi_N(t)]."""
    mu = np.asarray(spec.mu, dtype=np.float64)
    return np.exp(-((t - mu) ** 2) / (2.0 * spec.sigma))


def basis_matrix(spec: BasisSpec) -> npt.NDArray[np.float64]:
    """Phi with shape (N, T); column t-1 is eval_basis(spec, t) for t = 1..T."""
    mu = np.asarray(spec.mu, dtype=np.float64)
    t = np.arange(1, spec.horizon + 1, dtype=np.float64)
    return np.exp(-((t[None, :] - mu[:, None]) ** 2) / (2.0 * spec.sigma))


def trajectory_from_weights(phi: npt.NDArray[np.float64], w: WeightVector) -> VelocityTrajectory:
    """Xdot = Phi^T w."""
    w = np.asarray(w, dtype=np.float64)
    if phi.ndim != 2 or w.ndim != 1 or phi.shape[0] != w.shape[0]:
        raise ValueError(f"Dimension mismatch: phi {phi.shape} vs w {w.shape}")
    return phi.T @ w


def fit_weights(reference: VelocityTrajectory, phi: npt.NDArray[np.float64]) -> WeightFit:
    """
    Least-squares weights for a reference sequence.

    Uses an SVD-based solver, so a rank-deficient basis yields the minimum-norm
    solution and is flagged rather than rejected.
    """
    reference = np.asarray(reference, dtype=np.float64)
    n_basis, horizon = phi.shape
    if reference.shape != (horizon,):
        raise ValueError(f"Reference length {reference.shape} does not match basis horizon {horizon}")
    if horizon < n_basis:
        raise ValueError(f"Need horizon >= n_basis, got T={horizon} < N={n_basis}")

    w, _, rank, _ = np.linalg.lstsq(phi.T, reference, rcond=None)
    residual = reference - phi.T @ w
    return WeightFit(
        w=w,
        residual_norm=float(np.linalg.norm(residual)),
        rank=int(rank),
        rank_deficient=bool(rank < n_basis),
    )


def _sample_trapezoid(v_max: float, t_accel: float, t_cruise: float, t_decel: float, dt: float) -> List[float]:
    duration = t_accel + t_cruise + t_decel
    n = max(1, math.ceil(duration / dt - 1e-9))
    t = np.arange(n + 1, dtype=np.float64) * dt
    v = np.where(
        t < t_accel,
        v_max * t / t_accel,
        np.where(t <= t_accel + t_cruise, v_max, v_max * (duration - t) / t_decel),
    )
    v = np.clip(v, 0.0, v_max)
    v[0] = 0.0
    v[-1] = 0.0
    return [float(x) for x in v]


def _sampled_area(v_max: float, t_accel: float, t_cruise: float, t_decel: float, dt: float) -> float:
    return float(np.trapezoid(_sample_trapezoid(v_max, t_accel, t_cruise, t_decel, dt), dx=dt))


def _cruise_for_area(v_max: float, displacement: float, t_accel: float, t_decel: float, dt: float) -> float:
    """
    Bisects the cruise time whose sampled profile integrates (trapezoidal rule)
    to `displacement`. The sampled area grows continuously with t_cruise.
    """
    nominal = max(0.0, (displacement - v_max * (t_accel + t_decel) / 2.0) / v_max)
    lo, hi = 0.0, nominal + 2.0 * dt
    while _sampled_area(v_max, t_accel, hi, t_decel, dt) < displacement:
        hi += 2.0 * dt
    for _ in range(CRUISE_BISECTIONS):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if _sampled_area(v_max, t_accel, mid, t_decel, dt) < displacement:
            lo = mid
        else:
            hi = mid
    return hi


def trapezoid_profile(v_max: float, displacement: float, t_accel: float, t_decel: float, dt: float) -> ReferenceProfile:
    """
    Builds a trapezoidal speed reference covering `displacement`.

    Ramp corners falling between control ticks make the sampled area differ
    from the continuous one, so t_cruise is solved on the samples themselves:
    cruise samples equal v_max exactly and the trapezoidal-rule integral equals
    the displacement. t_cruise therefore differs from the continuous
    (displacement - v_max (t_accel + t_decel) / 2) / v_max by less than dt.
    When even the pure ramps overshoot on the sample grid, the triangle is
    scaled down instead.
    """
    for name, value in (("v_max", v_max), ("displacement", displacement), ("t_accel", t_accel),
                        ("t_decel", t_decel), ("dt", dt)):
        if not (math.isfinite(value) and value > 0):
            raise ValueError(f"{name} must be positive and finite, got {value}")

    ramp_distance = v_max * (t_accel + t_decel) / 2.0
    if ramp_distance > displacement * (1.0 + 1e-12):
        raise ValueError(
            f"Infeasible trapezoid: v_max={v_max} with t_accel={t_accel}, t_decel={t_decel} "
            f"requires a minimum displacement of {ramp_distance:.6g} m, got {displacement:.6g} m"
        )

    if _sampled_area(v_max, t_accel, 0.0, t_decel, dt) >= displacement:
        t_cruise = 0.0
        raw = np.asarray(_sample_trapezoid(v_max, t_accel, t_cruise, t_decel, dt))
        samples = raw * (displacement / float(np.trapezoid(raw, dx=dt)))
    else:
        t_cruise = _cruise_for_area(v_max, displacement, t_accel, t_decel, dt)
        samples = np.asarray(_sample_trapezoid(v_max, t_accel, t_cruise, t_decel, dt))

    return ReferenceProfile(
        v_max=v_max,
        t_accel=t_accel,
        t_cruise=t_cruise,
        t_decel=t_decel,
        dt=dt,
        displacement=displacement,
        samples=tuple(float(x) for x in samples),
    )


def default_profile(
    v_max: float,
    displacement: float = PATH_DISPLACEMENT,
    ramp_fraction: float = 0.25,
    dt: float = CONTROL_DT,
) -> ReferenceProfile:
    """
    Profile whose acceleration and deceleration phases each take `ramp_fraction`
    of the continuous-time duration (the sampled cruise adds less than one
    tick). Changing v_max keeps the area (the path length) fixed.
    """
    if not 0 < ramp_fraction <= 0.5:
        raise ValueError(f"ramp_fraction must be in (0, 0.5], got {ramp_fraction}")
    duration = displacement / (v_max * (1.0 - ramp_fraction))
    ramp = ramp_fraction * duration
    return trapezoid_profile(v_max=v_max, displacement=displacement, t_accel=ramp, t_decel=ramp, dt=dt)


def sample_reference_window(profile: ReferenceProfile, t_now: int, horizon: int) -> VelocityTrajectory:
    """
    The `horizon` reference samples starting at index `t_now`, zero-padded past
    the end of the profile.
    """
    if t_now < 0:
        raise ValueError(f"t_now must be >= 0, got {t_now}")
    window = np.zeros(horizon, dtype=np.float64)
    segment = profile.samples[t_now : t_now + horizon]
    window[: len(segment)] = segment
    return window
