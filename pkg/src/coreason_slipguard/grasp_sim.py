# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.

"""
Stick-slip simulator of a box held in a parallel-jaw gripper.

The box hangs from the grip axis like a pendulum. Torsional Coulomb friction at
the finger pads holds it until the gravity and inertial torques exceed the cap
mu_f * N * r_c; then it rotates and may re-stick or fall out of the grasp.
Rotations are stored in degrees and integrated in radians.
"""

import math
import time
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt

from coreason_slipguard.basis import ReferenceProfile, path_direction
from coreason_slipguard.interfaces import TickController
from coreason_slipguard.schemas import (
    ACTION_DIM,
    GRAVITY,
    SLIP_THRESHOLD_DEG,
    ObjectParams,
    SimConfig,
    SimState,
    TactileFrame,
    TickCommand,
    TickRecord,
    TrialLog,
    TrialMeta,
)
from coreason_slipguard.utils.logger import logger
from coreason_slipguard.utils.seeding import derive_seed

TAXEL_GRID = 4
TAXEL_PITCH = 0.005  # m
N_TAXELS = TAXEL_GRID * TAXEL_GRID

_offsets = (np.arange(TAXEL_GRID, dtype=np.float64) - (TAXEL_GRID - 1) / 2.0) * TAXEL_PITCH
_TAXEL_U, _TAXEL_V = (a.ravel() for a in np.meshgrid(_offsets, _offsets, indexing="ij"))

OBJECT_PRESETS: Dict[str, ObjectParams] = {
    "train_box": ObjectParams(),
    "heavy_box": ObjectParams().with_mass(0.55),
    "light_box": ObjectParams().with_mass(0.25),
    "slick_box": ObjectParams(friction_coeff=0.6),
    "grippy_box": ObjectParams(friction_coeff=1.1),
}

DEFAULT_SIM = SimConfig()


def get_preset(name: str) -> ObjectParams:
    if name not in OBJECT_PRESETS:
        raise ValueError(f"Unknown object preset '{name}'. Available: {sorted(OBJECT_PRESETS)}")
    return OBJECT_PRESETS[name]


def net_drive_torque(theta_rad: float, accel: float, params: ObjectParams) -> float:
    """Gravity plus inertial torque about the grip axis, theta measured from vertical."""
    lever = params.mass * params.com_distance
    return -lever * GRAVITY * math.sin(theta_rad) - lever * accel * math.cos(theta_rad)


def rotation_substep(
    theta: float, theta_dot: float, accel: float, params: ObjectParams, h: float, stick_eps: float
) -> Tuple[float, float]:
    """
    One semi-implicit Euler substep of the rotation, in radians.

    Returns the new (theta, theta_dot).
    """
    tau = net_drive_torque(theta, accel, params)
    cap = params.friction_torque

    if abs(theta_dot) < stick_eps:
        if abs(tau) <= cap:
            return theta, 0.0
        # Breakaway: kinetic friction opposes the direction the net torque pushes.
        theta_dot = (tau - math.copysign(cap, tau)) / params.inertia * h
    else:
        new_dot = theta_dot + (tau - math.copysign(cap, theta_dot)) / params.inertia * h
        crossed = new_dot == 0.0 or (new_dot > 0.0) != (theta_dot > 0.0)
        if crossed and abs(tau) <= cap:
            new_dot = 0.0
        theta_dot = new_dot

    return theta + theta_dot * h, theta_dot


def step(
    state: SimState,
    params: ObjectParams,
    commanded_speed: float,
    dt: float,
    sim: SimConfig = DEFAULT_SIM,
) -> SimState:
    """
    Advances the gripper and object by one control period.

    The end-effector speed follows the command through a first-order lag
    (exact discretization per substep). Once the drop latch is set the object
    no longer rotates; the arm keeps moving.
    """
    if not (math.isfinite(dt) and dt > 0):
        raise ValueError(f"dt must be positive, got {dt}")
    if not math.isfinite(commanded_speed):
        raise ValueError(f"commanded_speed must be finite, got {commanded_speed}")

    h = dt / sim.n_substeps
    alpha = -math.expm1(-h / sim.actuator_tau)
    stick_eps = math.radians(sim.stick_eps_deg)
    fail = math.radians(params.failure_angle)

    speed = state.ee_speed
    theta = math.radians(state.theta)
    theta_dot = math.radians(state.theta_dot)
    dropped = state.dropped

    for _ in range(sim.n_substeps):
        new_speed = speed + (commanded_speed - speed) * alpha
        accel = (new_speed - speed) / h
        speed = new_speed
        if dropped:
            continue
        theta, theta_dot = rotation_substep(theta, theta_dot, accel, params, h, stick_eps)
        if abs(theta) >= fail:
            dropped = True

    return SimState(
        theta=math.degrees(theta),
        theta_dot=math.degrees(theta_dot),
        ee_speed=speed,
        ee_accel=(speed - state.ee_speed) / dt,
        t=state.t + dt,
        dropped=dropped,
    )


def taxel_gains(rng: np.random.Generator, spread: float) -> npt.NDArray[np.float64]:
    """Per-taxel relative gain errors eta_i, drawn once per trial."""
    return spread * rng.standard_normal(N_TAXELS)


def synth_tactile(
    state: SimState,
    params: ObjectParams,
    rng_seed: Union[int, np.random.Generator],
    sim: SimConfig = DEFAULT_SIM,
    gains: Optional[npt.NDArray[np.float64]] = None,
) -> TactileFrame:
    """
    Synthesizes one 4x4x3 tactile frame from the mechanical state.

    x: inertial load share m|a|/16 scaled by the taxel gain, plus rotational shear.
    y: gravity load share m g sin(theta)/16 scaled by the taxel gain, plus rotational shear.
    z: normal load (m g cos(theta) + N)/16.
    Rotational shear is tangential about the sensor center: kappa_rot * omega * lever arm.

    Passing an integer seed draws the gains from it when none are given, so a
    fixed seed and state always produce the same frame.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    if gains is None:
        gains = taxel_gains(rng, sim.taxel_gain_spread)

    theta = math.radians(state.theta)
    omega = math.radians(state.theta_dot)
    share = 1.0 / N_TAXELS

    fx = params.mass * abs(state.ee_accel) * share * (1.0 + gains) - sim.rotation_gain * omega * _TAXEL_V
    fy = params.mass * GRAVITY * math.sin(theta) * share * (1.0 + gains) + sim.rotation_gain * omega * _TAXEL_U
    fz = np.full(N_TAXELS, (params.mass * GRAVITY * math.cos(theta) + params.grip_normal_force) * share)

    frame = np.stack([fx, fy, fz], axis=1)
    frame = frame + sim.tactile_noise_std * rng.standard_normal(frame.shape)
    return TactileFrame(shear=tuple(frame.ravel().tolist()), timestamp=state.t)


def slip_label(theta: float) -> bool:
    return abs(theta) > SLIP_THRESHOLD_DEG


def action6(speed: float) -> List[float]:
    """Embeds a path speed as (v_x, v_y, 0, 0, 0, 0)."""
    direction = path_direction()
    vec = np.zeros(ACTION_DIM, dtype=np.float64)
    vec[:2] = speed * direction[:2]
    return [float(x) for x in vec]


def n_trial_ticks(profile: ReferenceProfile, sim: SimConfig = DEFAULT_SIM) -> int:
    """Control ticks in a trial: the profile plus the settle tail of zero commands."""
    return len(profile.samples) - 1 + int(round(sim.settle_time / profile.dt))


def run_trial(
    profile: ReferenceProfile,
    params: ObjectParams,
    controller: Optional[TickController] = None,
    seed: int = 0,
    sim: SimConfig = DEFAULT_SIM,
    trial_id: Optional[str] = None,
) -> TrialLog:
    """
    Simulates one linear motion at the control rate.

    Record k holds the command applied over [k dt, (k+1) dt] and the state at
    (k+1) dt. Without a controller the command is the reference sample at the
    end of the tick; a controller sees the records of ticks 0..k-1.
    """
    if not math.isclose(profile.dt, sim.dt, rel_tol=1e-12):
        raise ValueError(f"Profile dt {profile.dt} does not match simulator dt {sim.dt}")

    gain_rng = np.random.default_rng(derive_seed(seed, "taxel_gains"))
    gains = taxel_gains(gain_rng, sim.taxel_gain_spread)
    noise_rng = np.random.default_rng(derive_seed(seed, "tactile_noise"))
    jitter_rng = np.random.default_rng(derive_seed(seed, "label_jitter"))

    if controller is not None:
        controller.reset()

    meta = TrialMeta(
        trial_id=trial_id or f"trial-{seed}",
        seed=seed,
        controller=controller.kind if controller is not None else "none",
        n_basis=controller.n_basis if controller is not None else None,
        v_max=profile.v_max,
        object=params,
        profile=profile.to_json_dict(),
        sim=sim,
    )

    state = SimState()
    records: List[TickRecord] = []
    drop_tick: Optional[int] = None
    held = 0.0
    n_ticks = n_trial_ticks(profile, sim)

    for k in range(n_ticks):
        reference = profile.samples[k + 1] if k + 1 < len(profile.samples) else 0.0
        decision: Optional[TickCommand] = None
        et_ms: Optional[float] = None

        if controller is None:
            cmd = reference
        else:
            start = time.perf_counter()
            try:
                decision = controller.decide(k, records)
                cmd = decision.cmd
                if not math.isfinite(cmd):
                    raise ValueError(f"Controller returned non-finite command {cmd}")
            except Exception as e:
                logger.warning("Controller failed; holding previous command", tick=k, error=str(e))
                decision = TickCommand(cmd=held, status="error")
                cmd = held
            et_ms = (time.perf_counter() - start) * 1000.0
        held = cmd

        state = step(state, params, cmd, sim.dt, sim)
        frame = synth_tactile(state, params, noise_rng, sim, gains)

        label_theta = state.theta
        if sim.label_jitter_deg > 0:
            label_theta += sim.label_jitter_deg * float(jitter_rng.standard_normal())

        if state.dropped and drop_tick is None:
            drop_tick = k
            logger.debug("Object dropped", trial_id=meta.trial_id, tick=k, theta=state.theta)

        records.append(
            TickRecord(
                t=(k + 1) * sim.dt,
                cmd=cmd,
                speed=state.ee_speed,
                accel=state.ee_accel,
                tactile=list(frame.shear),
                theta=state.theta,
                slip=int(slip_label(label_theta)),
                action6=action6(cmd),
                p_slip=decision.p_slip if decision is not None else None,
                rov=decision.rov if decision is not None else None,
                status=decision.status if decision is not None else None,
                alarm=decision.alarm if decision is not None else None,
                et_ms=et_ms,
            )
        )

    return TrialLog(meta=meta, records=records, dropped=drop_tick is not None, drop_tick=drop_tick)


class GraspSimulator:
    """
    A grasped object plus simulator settings; runs trials against it.
    """

    def __init__(self, params: Optional[ObjectParams] = None, sim: Optional[SimConfig] = None):
        self.params = params or ObjectParams()
        self.sim = sim or SimConfig()

    def run(
        self,
        profile: ReferenceProfile,
        controller: Optional[TickController] = None,
        seed: int = 0,
        trial_id: Optional[str] = None,
    ) -> TrialLog:
        return run_trial(profile, self.params, controller=controller, seed=seed, sim=self.sim, trial_id=trial_id)
