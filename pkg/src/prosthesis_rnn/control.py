"""Controllers and the 200 Hz closed loop that wires gait, plant and controller."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .config import GaitConfig, PlantConfig, WalkConfig, impact_params
from .gait import Domain, advance_phase, desired_state, initial_phase, phase_variable
from .plant import ControllerFault, PlantState, apply_impact, sample_sensors, step_continuous

CONTROL_DT = 0.005

COLUMNS = (
    "t",
    "th_d_pk", "th_a_pk", "th_d_pa", "th_a_pa",
    "dth_d_pk", "dth_a_pk", "dth_d_pa", "dth_a_pa",
    "e_pk", "e_pa", "de_pk", "de_pa",
    "s", "tau_pk", "tau_pa",
)  # fmt: skip
COL = {name: i for i, name in enumerate(COLUMNS)}
INPUT_COLUMNS = ("e_pk", "e_pa", "de_pk", "de_pa", "s")
LABEL_COLUMNS = ("tau_pk", "tau_pa")


class ClosedLoopDivergence(RuntimeError):
    def __init__(self, message: str, tick: int):
        super().__init__(f"{message} (tick {tick})")
        self.tick = tick


@dataclass(frozen=True)
class ControlInput:
    e_pk: float
    e_pa: float
    de_pk: float
    de_pa: float
    s: int

    def as_array(self) -> np.ndarray:
        return np.array([self.e_pk, self.e_pa, self.de_pk, self.de_pa, float(self.s)])


@dataclass(frozen=True)
class ControlOutput:
    tau_pk: float
    tau_pa: float


class Controller(Protocol):
    name: str

    def reset(self) -> None: ...

    def __call__(self, inp: ControlInput) -> ControlOutput: ...


def clamp_torque(tau: float, tau_max: float) -> float:
    return min(max(tau, -tau_max), tau_max)


def pd_control(inp: ControlInput, cfg: GaitConfig) -> ControlOutput:
    # errors are actual - desired, so positive gains enter with a minus sign
    tk = -(cfg.Kp_knee * inp.e_pk + cfg.Kd_knee * inp.de_pk)
    ta = -(cfg.Kp_ankle * inp.e_pa + cfg.Kd_ankle * inp.de_pa)
    return ControlOutput(clamp_torque(tk, cfg.tau_max), clamp_torque(ta, cfg.tau_max))


class PDController:
    name = "pd"

    def __init__(self, cfg: GaitConfig):
        self.cfg = cfg

    def reset(self) -> None:
        pass

    def __call__(self, inp: ControlInput) -> ControlOutput:
        return pd_control(inp, self.cfg)


@dataclass
class RunLog:
    data: np.ndarray  # (ticks, len(COLUMNS))
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.data.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.data[:, COL[name]]

    def inputs(self) -> np.ndarray:
        return self.data[:, [COL[c] for c in INPUT_COLUMNS]]

    def labels(self) -> np.ndarray:
        return self.data[:, [COL[c] for c in LABEL_COLUMNS]]


def rmse(actual, desired) -> float:
    a = np.asarray(actual, dtype=float)
    d = np.asarray(desired, dtype=float)
    if a.shape != d.shape or a.size == 0:
        raise ValueError(f"rmse needs equal non-empty sequences, got {a.shape} and {d.shape}")
    return float(np.sqrt(np.mean((a - d) ** 2)))


def tracking_rmse(log: RunLog) -> dict[str, float]:
    return {
        "rmse_knee": rmse(log.column("th_a_pk"), log.column("th_d_pk")),
        "rmse_ankle": rmse(log.column("th_a_pa"), log.column("th_d_pa")),
    }


def hip_speed(t: float, gait: GaitConfig, walk: WalkConfig, speed_scale: float = 1.0) -> float:
    return gait.v_hip * speed_scale * (1.0 + walk.speed_variation_amp * math.sin(2 * math.pi * walk.speed_variation_freq * t))


def run_closed_loop(
    controller: Controller,
    gait: GaitConfig,
    plant: PlantConfig,
    slope: str,
    duration: float,
    seed: int,
    walk: WalkConfig | None = None,
    speed_scale: float = 1.0,
    stop_margin: float = 0.05,
) -> RunLog:
    """Run ``round(duration * 200)`` control ticks and return the full log.

    Tick order: advance phase, desired state, sense, errors, controller, clamp,
    integrate ``plant.substeps`` substeps, then apply the impact map if this
    tick produced a foot strike. The logged ``th_a``/``dth_a`` are the sensed
    values the controller saw.
    """
    if not duration > 0:
        raise ValueError("duration must be > 0")
    walk = walk or WalkConfig()
    ip = impact_params(plant, slope)
    rng = np.random.default_rng(seed)
    n_ticks = int(round(duration / CONTROL_DT))
    noise = (plant.noise_angle, plant.noise_velocity)
    controller.reset()

    ph = initial_phase(gait)
    st = PlantState(t=0.0)
    rows = np.empty((n_ticks, len(COLUMNS)))
    for k in range(n_ticks):
        t = k * CONTROL_DT
        v = hip_speed(t, gait, walk, speed_scale)
        ph, impact = advance_phase(ph, CONTROL_DT, v, gait)
        des = desired_state(ph, gait, v)
        qk, qa, dqk, dqa = sample_sensors(st, noise, rng)
        inp = ControlInput(qk - des.theta_knee, qa - des.theta_ankle, dqk - des.dtheta_knee, dqa - des.dtheta_ankle, des.s)
        out = controller(inp)
        tk, ta = out.tau_pk, out.tau_pa
        if not (math.isfinite(tk) and math.isfinite(ta)):
            raise ClosedLoopDivergence(f"controller {controller.name!r} produced non-finite torque", k)
        tk, ta = clamp_torque(tk, gait.tau_max), clamp_torque(ta, gait.tau_max)

        load_k = load_a = 0.0
        if ph.domain == Domain.STANCE:
            rho = min(max(phase_variable(ph.hip_pos, gait, ph.hip_start), 0.0), gait.rho_max)
            w = math.sin(math.pi * rho / gait.rho_max)
            load_k, load_a = plant.stance_load_knee * w, plant.stance_load_ankle * w
        try:
            for _ in range(plant.substeps):
                st = step_continuous(st, tk + load_k, ta + load_a, plant.knee, plant.ankle, ip, plant.dt_sim)
        except ControllerFault as exc:
            raise ClosedLoopDivergence(str(exc), k) from exc
        if impact:
            st = apply_impact(st, ip)
        if not (
            plant.knee.angle_min - stop_margin <= st.theta_knee <= plant.knee.angle_max + stop_margin
            and plant.ankle.angle_min - stop_margin <= st.theta_ankle <= plant.ankle.angle_max + stop_margin
        ):
            raise ClosedLoopDivergence("joint angle left the hard-stop range", k)

        rows[k] = (
            t,
            des.theta_knee, qk, des.theta_ankle, qa,
            des.dtheta_knee, dqk, des.dtheta_ankle, dqa,
            inp.e_pk, inp.e_pa, inp.de_pk, inp.de_pa,
            des.s, tk, ta,
        )  # fmt: skip
    meta = {"controller": controller.name, "slope": slope, "seed": seed, "duration": duration, "speed_scale": speed_scale}
    return RunLog(rows, meta)


# ---------------------------------------------------------------------------
# CSV + sidecar


def write_runlog(log: RunLog, path: str | Path, extra_meta: dict | None = None) -> None:
    path = Path(path)
    np.savetxt(path, log.data, fmt="%.17g", delimiter=",", header=",".join(COLUMNS), comments="")
    meta = dict(log.meta)
    if extra_meta:
        meta.update(extra_meta)
    write_json(path.with_suffix(".json"), meta)


def read_runlog(path: str | Path) -> RunLog:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if tuple(header) != COLUMNS:
        raise ValueError(f"{path}: unexpected header {header}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    meta_path = path.with_suffix(".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return RunLog(data, meta)


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
