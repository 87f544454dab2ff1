"""Per-joint second-order prosthesis plant with hard stops and an impact map."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .config import ImpactParams, JointParams


class ControllerFault(RuntimeError):
    """Raised when a controller produces a torque the plant cannot integrate."""


@dataclass(frozen=True)
class PlantState:
    theta_knee: float = 0.0
    theta_ankle: float = 0.0
    dtheta_knee: float = 0.0
    dtheta_ankle: float = 0.0
    t: float = 0.0


def _joint_step(theta, dtheta, tau, bias, jp: JointParams, dt):
    acc = (tau + bias - jp.damping * dtheta - jp.gravity_gain * math.sin(theta)) / jp.inertia
    dtheta = dtheta + acc * dt
    theta = theta + dtheta * dt
    # perfectly plastic stop
    if theta < jp.angle_min:
        theta, dtheta = jp.angle_min, 0.0
    elif theta > jp.angle_max:
        theta, dtheta = jp.angle_max, 0.0
    return theta, dtheta


def step_continuous(
    s: PlantState,
    tau_knee: float,
    tau_ankle: float,
    jp_knee: JointParams,
    jp_ankle: JointParams,
    ip: ImpactParams,
    dt: float,
) -> PlantState:
    """Semi-implicit Euler: velocity first, then position with the new velocity."""
    if not (math.isfinite(tau_knee) and math.isfinite(tau_ankle)):
        raise ControllerFault(f"non-finite torque ({tau_knee}, {tau_ankle}) at t={s.t:.3f}s")
    if not 0 < dt <= 0.002:
        raise ValueError(f"dt must lie in (0, 2 ms], got {dt}")
    bias_k, bias_a = ip.slope_disturbance
    qk, dqk = _joint_step(s.theta_knee, s.dtheta_knee, tau_knee, bias_k, jp_knee, dt)
    qa, dqa = _joint_step(s.theta_ankle, s.dtheta_ankle, tau_ankle, bias_a, jp_ankle, dt)
    return PlantState(qk, qa, dqk, dqa, s.t + dt)


def apply_impact(s: PlantState, ip: ImpactParams) -> PlantState:
    return replace(s, dtheta_knee=s.dtheta_knee * ip.kappa_knee, dtheta_ankle=s.dtheta_ankle * ip.kappa_ankle)


def sample_sensors(
    s: PlantState, noise_std: tuple[float, float], rng: np.random.Generator
) -> tuple[float, float, float, float]:
    """Measured (theta_pk, theta_pa, dtheta_pk, dtheta_pa) with additive Gaussian noise.

    ``noise_std`` is (angle std in rad, velocity std in rad/s). Four normals are
    drawn on every call, even at zero noise, so the stream position does not
    depend on the noise level.
    """
    sa, sv = noise_std
    if sa < 0 or sv < 0:
        raise ValueError("noise_std must be >= 0")
    n = rng.standard_normal(4)
    return (
        s.theta_knee + sa * n[0],
        s.theta_ankle + sa * n[1],
        s.dtheta_knee + sv * n[2],
        s.dtheta_ankle + sv * n[3],
    )
