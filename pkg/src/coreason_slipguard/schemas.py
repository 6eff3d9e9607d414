# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.

import math
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from coreason_slipguard.basis import CONTROL_DT, PATH_DISPLACEMENT, ReferenceProfile, default_profile

N_TACTILE_CHANNELS = 48
ACTION_DIM = 6
SLIP_THRESHOLD_DEG = 6.0
GRAVITY = 9.81

ControllerKind = Literal["none", "rsc", "psc"]
ModelKind = Literal["detect", "predict"]


def box_inertia(mass: float, com_distance: float, height: float = 0.25, width: float = 0.15) -> float:
    """Moment of inertia of the training box about the grip axis (parallel-axis theorem)."""
    return mass * com_distance**2 + mass * (height**2 + width**2) / 12.0


# --- Simulator ---


class ObjectParams(BaseModel):
    """Physical constants of a grasped object. Defaults model the 400 g training box."""

    model_config = ConfigDict(frozen=True)

    mass: float = Field(default=0.4, gt=0)
    com_distance: float = Field(default=0.1, gt=0)
    inertia: float = Field(default=0.0, gt=0)
    friction_coeff: float = Field(default=0.8, gt=0)
    grip_normal_force: float = Field(default=1.0, gt=0)
    contact_radius: float = Field(default=0.01, gt=0)
    failure_angle: float = Field(default=12.0, gt=SLIP_THRESHOLD_DEG)

    @model_validator(mode="before")
    @classmethod
    def _default_inertia(cls, data: Any) -> Any:
        # Zero or missing inertia means "the box inertia for this mass and lever".
        if isinstance(data, dict) and not data.get("inertia"):
            mass = data.get("mass", 0.4)
            r = data.get("com_distance", 0.1)
            if isinstance(mass, (int, float)) and isinstance(r, (int, float)):
                data = {**data, "inertia": box_inertia(float(mass), float(r))}
        return data

    @property
    def friction_torque(self) -> float:
        """Torsional friction cap mu_f * N * r_c."""
        return self.friction_coeff * self.grip_normal_force * self.contact_radius

    def stick_threshold(self, theta_deg: float = 0.0) -> float:
        """Largest |ee_accel| held without slipping, ignoring gravity: tau_max / (m r cos(theta))."""
        return self.friction_torque / (self.mass * self.com_distance * math.cos(math.radians(theta_deg)))

    def with_mass(self, mass: float) -> "ObjectParams":
        """Same object with a different mass; the inertia scales with it."""
        return self.model_copy(update={"mass": mass, "inertia": self.inertia * mass / self.mass})


class SimConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    dt: float = Field(default=CONTROL_DT, gt=0)
    actuator_tau: float = Field(default=0.05, gt=0)
    n_substeps: int = Field(default=10, ge=1)
    stick_eps_deg: float = Field(default=1e-3, gt=0)
    settle_time: float = Field(default=0.6, ge=0)
    rotation_gain: float = Field(default=5.0, ge=0)
    tactile_noise_std: float = Field(default=0.01, ge=0)
    taxel_gain_spread: float = Field(default=0.1, ge=0)
    label_jitter_deg: float = Field(default=0.0, ge=0)


class SimState(BaseModel):
    """Gripper-object state. theta is the rotation about the grip axis from vertical."""

    model_config = ConfigDict(frozen=True)

    theta: float = 0.0
    theta_dot: float = 0.0
    ee_speed: float = 0.0
    ee_accel: float = 0.0
    t: float = 0.0
    dropped: bool = False

    @model_validator(mode="after")
    def _finite(self) -> "SimState":
        for name in ("theta", "theta_dot", "ee_speed", "ee_accel", "t"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"SimState.{name} must be finite")
        return self


class TactileFrame(BaseModel):
    """48 tactile channels: a 4x4 taxel grid times (x, y, z) force axes, taxel-major."""

    model_config = ConfigDict(frozen=True)

    shear: Tuple[float, ...]
    timestamp: float

    @field_validator("shear")
    @classmethod
    def _check_shape(cls, v: Tuple[float, ...]) -> Tuple[float, ...]:
        if len(v) != N_TACTILE_CHANNELS:
            raise ValueError(f"TactileFrame needs {N_TACTILE_CHANNELS} channels, got {len(v)}")
        if not all(math.isfinite(x) for x in v):
            raise ValueError("TactileFrame channels must be finite")
        return v

    def as_array(self) -> npt.NDArray[np.float64]:
        return np.asarray(self.shear, dtype=np.float64)


class TickRecord(BaseModel):
    """One control tick: the command applied over the tick and the state at its end."""

    t: float
    cmd: float
    speed: float
    accel: float
    tactile: List[float]
    theta: float
    slip: int = Field(ge=0, le=1)
    action6: List[float]
    p_slip: Optional[float] = None
    rov: Optional[float] = None
    status: Optional[str] = None
    alarm: Optional[int] = None
    et_ms: Optional[float] = None


class TickCommand(BaseModel):
    """What a controller hands the simulator for one tick."""

    cmd: float
    p_slip: Optional[float] = None
    rov: Optional[float] = None
    status: Optional[str] = None
    alarm: Optional[int] = None


class TrialMeta(BaseModel):
    trial_id: str
    seed: int
    controller: ControllerKind = "none"
    n_basis: Optional[int] = None
    v_max: float
    object: ObjectParams
    profile: Dict[str, float]
    sim: SimConfig = Field(default_factory=SimConfig)


class TrialLog(BaseModel):
    meta: TrialMeta
    records: List[TickRecord] = Field(default_factory=list)
    dropped: bool = False
    drop_tick: Optional[int] = None

    def column(self, name: str) -> npt.NDArray[np.float64]:
        return np.asarray([getattr(r, name) for r in self.records], dtype=np.float64)


# --- Filtering, data and training ---


class FilterConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    q_process: float = Field(default=1e-5, gt=0)
    r_measure: float = Field(default=1e-2, gt=0)
    context: int = Field(default=10, ge=1)
    horizon: int = Field(default=10, ge=1)


def _default_v_max_grid() -> List[float]:
    return [round(0.2 + 0.05 * i, 2) for i in range(13)]


class DatasetConfig(BaseModel):
    n_trials: int = Field(default=660, ge=1)
    v_max_grid: List[float] = Field(default_factory=_default_v_max_grid, min_length=1)
    mass_range: Tuple[float, float] = (0.3, 0.5)
    friction_range: Tuple[float, float] = (0.6, 1.0)
    seed: int = 0
    workers: int = Field(default=1, ge=1)

    @field_validator("v_max_grid")
    @classmethod
    def _positive_grid(cls, v: List[float]) -> List[float]:
        if any(x <= 0 for x in v):
            raise ValueError("v_max_grid entries must be positive")
        return v

    @field_validator("mass_range", "friction_range")
    @classmethod
    def _ordered_range(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if not 0 < v[0] <= v[1]:
            raise ValueError(f"Range must satisfy 0 < low <= high, got {v}")
        return v


class DatasetManifest(BaseModel):
    format_version: int = 1
    n_trials: int
    seed: int
    config: DatasetConfig
    n_ticks: int
    n_slip_ticks: int
    slip_fraction: float
    checksums: Dict[str, str]


class TrainConfig(BaseModel):
    learning_rate: float = Field(default=1e-3, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    batch_size: int = Field(default=64, ge=1)
    epochs: int = Field(default=30, ge=1)
    pos_weight: Optional[float] = Field(default=None, gt=0)
    clip_norm: Optional[float] = Field(default=5.0, gt=0)
    seed: int = 0
    train_fraction: float = Field(default=0.8, gt=0, lt=1)
    hidden: int = Field(default=64, ge=1)
    action_hidden: int = Field(default=32, ge=1)
    fusion_hidden: int = Field(default=64, ge=1)


# --- Optimization and control ---


class SolverSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    tol: float = Field(default=1e-3, gt=0)
    ctol: float = Field(default=1e-3, gt=0)
    rho0: float = Field(default=10.0, gt=0)
    rho_max: float = Field(default=1e6, gt=0)
    max_inner: int = Field(default=100, ge=1)
    max_outer: int = Field(default=20, ge=1)
    time_budget_ms: Optional[float] = Field(default=None, gt=0)


class ControllerConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: ControllerKind = "psc"
    n_basis: int = Field(default=5, ge=2, le=8)
    horizon: int = Field(default=10, ge=2)
    a: float = Field(default=0.5, gt=0, lt=1)
    epsilon: float = Field(default=0.01, gt=0)
    delta_slip: float = Field(default=0.05, gt=0, lt=1)
    threshold: float = Field(default=0.5, gt=0, lt=1)
    lb: float = -0.05
    ub: float = 0.05
    warm_start: bool = True
    norm_power: Literal[1, 2] = 2
    sigma: Optional[float] = Field(default=None, gt=0)
    # Wall-clock cap on the solves of one tick, leaving headroom under the 33 ms
    # control period for filtering and the last inner step. None replays bit-for-bit.
    tick_budget_ms: Optional[float] = Field(default=28.0, gt=0)
    solver: SolverSettings = Field(default_factory=SolverSettings)

    @model_validator(mode="after")
    def _ordered_box(self) -> "ControllerConfig":
        if not self.lb < self.ub:
            raise ValueError(f"Need lb < ub, got lb={self.lb}, ub={self.ub}")
        if self.n_basis > self.horizon:
            raise ValueError(f"n_basis {self.n_basis} exceeds horizon {self.horizon}")
        return self


# --- Experiments ---


class ProfileSpec(BaseModel):
    """Named reference profile as written in the experiment config."""

    v_max: float = Field(gt=0)
    displacement: float = Field(default=PATH_DISPLACEMENT, gt=0)
    ramp_fraction: float = Field(default=0.25, gt=0, le=0.5)
    dt: float = Field(default=CONTROL_DT, gt=0)

    def build(self) -> ReferenceProfile:
        return default_profile(self.v_max, self.displacement, self.ramp_fraction, self.dt)


class SweepConfig(BaseModel):
    basis_range: Tuple[int, int] = (2, 8)
    trials: int = Field(default=10, ge=1)
    kinds: List[Literal["rsc", "psc"]] = Field(default_factory=lambda: ["rsc", "psc"], min_length=1)
    v_max: float = Field(default=0.5, gt=0)
    seed: int = 0
    workers: int = Field(default=1, ge=1)

    @field_validator("basis_range")
    @classmethod
    def _valid_range(cls, v: Tuple[int, int]) -> Tuple[int, int]:
        if not 2 <= v[0] <= v[1] <= 8:
            raise ValueError(f"basis_range must satisfy 2 <= low <= high <= 8, got {v}")
        return v

    @property
    def basis_counts(self) -> List[int]:
        return list(range(self.basis_range[0], self.basis_range[1] + 1))


class TrialMetrics(BaseModel):
    trial_id: str
    kind: ControllerKind
    n_basis: int
    seed: int
    rov: float
    # Converged ticks behind rov; 0 means no tick converged and rov is 0.0.
    rov_ticks: int = Field(default=0, ge=0)
    mor: float
    et_ms: float
    rts: int
    drt: float
    dropped: bool
    first_alarm_tick: int = -1


class MetricsRow(BaseModel):
    """Aggregated metrics of one (controller, basis count) cell."""

    kind: ControllerKind
    n_basis: int
    rov_mean: float
    rov_std: float = Field(ge=0)
    mor_mean: float
    mor_std: float = Field(ge=0)
    et_mean: float
    et_std: float = Field(ge=0)
    rts_mean: float
    rts_std: float = Field(ge=0)
    drt_mean: float
    drt_std: float = Field(ge=0)
    drops: int = Field(ge=0)
    trials: int = Field(ge=1)


class GeneralizationRow(BaseModel):
    """Controller performance on one object preset."""

    object: str
    kind: ControllerKind
    n_basis: int
    mor_mean: float
    rts_mean: float
    drt_mean: float
    rov_mean: float
    drops: int = Field(ge=0)
    trials: int = Field(ge=1)


class ExperimentConfig(BaseModel):
    """Everything a CLI run needs; loadable from a JSON file."""

    object: ObjectParams = Field(default_factory=ObjectParams)
    sim: SimConfig = Field(default_factory=SimConfig)
    filter: FilterConfig = Field(default_factory=FilterConfig)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    controller: ControllerConfig = Field(default_factory=ControllerConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    profiles: Dict[str, ProfileSpec] = Field(default_factory=lambda: {"default": ProfileSpec(v_max=0.5)})

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Copy with every seed replaced."""
        return self.model_copy(
            update={
                "dataset": self.dataset.model_copy(update={"seed": seed}),
                "train": self.train.model_copy(update={"seed": seed}),
                "sweep": self.sweep.model_copy(update={"seed": seed}),
            }
        )

    def profile(self, name: str) -> ReferenceProfile:
        if name not in self.profiles:
            raise ValueError(f"Unknown profile '{name}'. Available: {sorted(self.profiles)}")
        return self.profiles[name].build()


def dump_json(model: BaseModel) -> Dict[str, Any]:
    return model.model_dump(mode="json")
