"""Desired knee/ankle trajectories and the stance/swing phase machine."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

from .config import CwfParams, GaitConfig


class Domain(enum.IntEnum):
    SWING = 0
    STANCE = 1


@dataclass(frozen=True)
class PhaseState:
    domain: Domain = Domain.STANCE
    t_in_domain: float = 0.0
    hip_pos: float = 0.0
    hip_start: float = 0.0
    step_index: int = 0

    def __post_init__(self):
        if self.t_in_domain < 0:
            raise ValueError("t_in_domain must be >= 0")


@dataclass(frozen=True)
class DesiredState:
    theta_knee: float
    dtheta_knee: float
    theta_ankle: float
    dtheta_ankle: float
    s: int


def eval_cwf(t: float, p: CwfParams) -> float:
    return math.exp(-p.a4 * t) * (p.a1 * math.cos(p.a2 * t) + p.a3 * math.sin(p.a2 * t)) + p.a5


def eval_cwf_dot(t: float, p: CwfParams) -> float:
    c, s = math.cos(p.a2 * t), math.sin(p.a2 * t)
    osc = p.a1 * c + p.a3 * s
    dosc = p.a2 * (p.a3 * c - p.a1 * s)
    return math.exp(-p.a4 * t) * (dosc - p.a4 * osc)


def phase_variable(hip_pos: float, cfg: GaitConfig, hip_start: float | None = None) -> float:
    """Normalized stance progress; not clamped, may exceed ``rho_max``."""
    start = cfg.hip_start if hip_start is None else hip_start
    return (hip_pos - start) / cfg.v_hip


def initial_phase(cfg: GaitConfig) -> PhaseState:
    return PhaseState(Domain.STANCE, 0.0, cfg.hip_start, cfg.hip_start, 0)


def desired_state(ph: PhaseState, cfg: GaitConfig, hip_speed: float | None = None) -> DesiredState:
    """Knee target from the active domain's walking function; ankle target is always 0.

    In stance the walking function is evaluated at the clamped phase variable and
    its velocity is chain-ruled through rho using ``hip_speed`` (nominal ``v_hip``
    when omitted). In swing it is evaluated at the clamped time in domain.
    """
    if ph.domain == Domain.STANCE:
        rho = phase_variable(ph.hip_pos, cfg, ph.hip_start)
        rho = min(max(rho, 0.0), cfg.rho_max)
        speed = cfg.v_hip if hip_speed is None else hip_speed
        pos = eval_cwf(rho, cfg.knee_stance)
        vel = eval_cwf_dot(rho, cfg.knee_stance) * (speed / cfg.v_hip)
        return DesiredState(pos, vel, 0.0, 0.0, 1)
    t = min(max(ph.t_in_domain, 0.0), cfg.t_max)
    return DesiredState(eval_cwf(t, cfg.knee_swing), eval_cwf_dot(t, cfg.knee_swing), 0.0, 0.0, 0)


def advance_phase(ph: PhaseState, dt: float, hip_speed: float, cfg: GaitConfig) -> tuple[PhaseState, bool]:
    """One tick of the phase machine. Returns the new state and an impact flag.

    The impact flag is set on the Swing -> Stance edge (foot strike).
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    hip = ph.hip_pos + hip_speed * dt
    t = ph.t_in_domain + dt
    if ph.domain == Domain.STANCE:
        if phase_variable(hip, cfg, ph.hip_start) >= cfg.rho_max:
            return replace(ph, domain=Domain.SWING, t_in_domain=0.0, hip_pos=hip), False
        return replace(ph, t_in_domain=t, hip_pos=hip), False
    if t >= cfg.t_max:
        nxt = PhaseState(Domain.STANCE, 0.0, hip, hip, ph.step_index + 1)
        return nxt, True
    return replace(ph, t_in_domain=t, hip_pos=hip), False
