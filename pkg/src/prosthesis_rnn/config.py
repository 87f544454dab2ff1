"""Dataclass configuration for every pipeline stage, plus INI load/save.

Config files are plain ``key = value`` INI files. Each dataclass maps to a
section; nested dataclasses map to dotted sections, e.g. ``[gait.knee_swing]``.
Unknown sections or keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path


@dataclass(frozen=True)
class CwfParams:
    """Coefficients of exp(-a4 t) (a1 cos(a2 t) + a3 sin(a2 t)) + a5."""

    a1: float
    a2: float
    a3: float
    a4: float
    a5: float

    def __post_init__(self):
        vals = (self.a1, self.a2, self.a3, self.a4, self.a5)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite walking-function coefficient in {vals}")
        if self.a4 < 0:
            raise ValueError(f"a4 must be >= 0 (got {self.a4})")


@dataclass(frozen=True)
class GaitConfig:
    knee_stance: CwfParams = CwfParams(-0.1297, 15.3373, -0.0155, 3.0027, 0.2297)
    knee_swing: CwfParams = CwfParams(-0.2901, 13.8857, 0.2796, 0.0, 0.5482)
    v_hip: float = 1.1
    hip_start: float = 0.0
    rho_max: float = 0.6
    t_max: float = 0.4
    Kp_knee: float = 50.0
    Kd_knee: float = 2.5
    Kp_ankle: float = 15.0
    Kd_ankle: float = 0.8
    tau_max: float = 60.0

    def __post_init__(self):
        if not self.v_hip > 0:
            raise ValueError("v_hip must be > 0")
        if not 0 < self.rho_max <= 1.5:
            raise ValueError("rho_max must lie in (0, 1.5]")
        if not self.t_max > 0:
            raise ValueError("t_max must be > 0")
        if min(self.Kp_knee, self.Kd_knee, self.Kp_ankle, self.Kd_ankle) < 0:
            raise ValueError("PD gains must be >= 0")
        if not self.tau_max > 0:
            raise ValueError("tau_max must be > 0")


@dataclass(frozen=True)
class JointParams:
    inertia: float
    damping: float
    gravity_gain: float
    angle_min: float
    angle_max: float

    def __post_init__(self):
        if not self.inertia > 0:
            raise ValueError("inertia must be > 0")
        if self.damping < 0:
            raise ValueError("damping must be >= 0")
        if not self.angle_min < self.angle_max:
            raise ValueError("angle_min must be < angle_max")


@dataclass(frozen=True)
class ImpactParams:
    kappa_knee: float = 0.7
    kappa_ankle: float = 0.5
    # constant torque bias (knee, ankle) in N m; set from the slope preset
    slope_disturbance: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        for k in (self.kappa_knee, self.kappa_ankle):
            if not 0.0 <= k <= 1.0:
                raise ValueError(f"kappa must lie in [0, 1] (got {k})")


@dataclass(frozen=True)
class PlantConfig:
    knee: JointParams = JointParams(0.08, 0.3, 1.5, -0.2, 1.8)
    ankle: JointParams = JointParams(0.03, 0.2, 0.0, -0.6, 0.6)
    kappa_knee: float = 0.7
    kappa_ankle: float = 0.5
    # torque per unit sin(slope angle), per joint
    slope_gain_knee: float = 40.0
    slope_gain_ankle: float = 30.0
    # half-sine load torque applied over stance (body weight rolling over the foot)
    stance_load_knee: float = 1.5
    stance_load_ankle: float = 4.0
    noise_angle: float = 0.002
    noise_velocity: float = 0.02
    dt_sim: float = 0.001
    substeps: int = 5


@dataclass(frozen=True)
class WalkConfig:
    """Hip progression profile: v_hip * scale * (1 + amp sin(2 pi f t))."""

    speed_variation_amp: float = 0.05
    speed_variation_freq: float = 0.13
    # per-walk speed scale drawn uniformly from 1 +/- this in collect
    walk_speed_spread: float = 0.10


@dataclass(frozen=True)
class DataConfig:
    n_walks: int = 5
    walk_duration: float = 70.0
    seq_len: int = 100
    train_stride: int = 10
    eval_stride: int = 10


@dataclass(frozen=True)
class StageSchedule:
    epochs: int
    lr: float
    batch: int


@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 32
    n_layers: int = 2
    pretrain: StageSchedule = StageSchedule(50, 5e-4, 32)
    retrain: StageSchedule = StageSchedule(10, 1e-3, 64)
    theta_x: float = 2.0**2 / 2.0**8
    theta_h: float = 2.0**7 / 2.0**8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0


@dataclass(frozen=True)
class EngineConfig:
    theta_x_raw: int = 4
    theta_h_raw: int = 128
    mac_lanes: int = 8
    overhead_cycles: int = 256
    clock_mhz: float = 125.0


@dataclass(frozen=True)
class ExperimentConfig:
    gait: GaitConfig = field(default_factory=GaitConfig)
    plant: PlantConfig = field(default_factory=PlantConfig)
    walk: WalkConfig = field(default_factory=WalkConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    engine: EngineConfig = field(default_factory=EngineConfig)
    seed: int = 0


SLOPE_PRESETS = {"flat": 0.0, "uphill": 2.5, "downhill": -2.5}


def preset(name: str) -> ExperimentConfig:
    """``desk`` runs in minutes on one CPU core; ``paper`` is the full-scale run (M=128, stride-1 windows)."""
    if name == "desk":
        return ExperimentConfig()
    if name == "paper":
        return ExperimentConfig(
            data=DataConfig(train_stride=1, eval_stride=1),
            train=TrainConfig(hidden=128),
        )
    raise ValueError(f"unknown preset {name!r} (expected 'desk' or 'paper')")


def impact_params(plant: PlantConfig, slope: str) -> ImpactParams:
    if slope not in SLOPE_PRESETS:
        raise ValueError(f"unknown slope preset {slope!r}; choose from {sorted(SLOPE_PRESETS)}")
    s = math.sin(math.radians(SLOPE_PRESETS[slope]))
    return ImpactParams(
        plant.kappa_knee,
        plant.kappa_ankle,
        (plant.slope_gain_knee * s, plant.slope_gain_ankle * s),
    )


# ---------------------------------------------------------------------------
# serialization


def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def config_hash(cfg) -> str:
    blob = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text: str, typ):
    if typ is float:
        return float(text)
    if typ is int:
        return int(text)
    if typ is bool:
        return text.strip().lower() in ("1", "true", "yes", "on")
    if typing.get_origin(typ) is tuple:
        return tuple(float(v) for v in text.split(","))
    return text.strip()


def _write_section(parser, name, obj):
    hints = typing.get_type_hints(type(obj))
    scalars = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(hints[f.name]):
            continue
        scalars[f.name] = _format(value)
    if scalars:
        parser[name] = scalars
    for f in dataclasses.fields(obj):
        if dataclasses.is_dataclass(hints[f.name]):
            _write_section(parser, f"{name}.{f.name}", getattr(obj, f.name))


def _build(cls, name, parser):
    hints = typing.get_type_hints(cls)
    section = parser[name] if parser.has_section(name) else {}
    kwargs = {}
    for f in dataclasses.fields(cls):
        typ = hints[f.name]
        if dataclasses.is_dataclass(typ):
            kwargs[f.name] = _build(typ, f"{name}.{f.name}", parser)
        else:
            kwargs[f.name] = _parse(section[f.name], typ)
    return cls(**kwargs)


def _parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep key case (Kp_knee)
    return parser


def _render(cfg: ExperimentConfig) -> configparser.ConfigParser:
    parser = _parser()
    parser["experiment"] = {"seed": str(cfg.seed)}
    for f in dataclasses.fields(cfg):
        if f.name != "seed":
            _write_section(parser, f.name, getattr(cfg, f.name))
    return parser


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        _render(cfg).write(fh)


def load_config(path: str | Path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Read an INI file; keys absent from the file keep the values of ``base``."""
    parser = _parser()
    if not parser.read(path):
        raise FileNotFoundError(path)
    full = _render(base or ExperimentConfig())
    for sec in parser.sections():
        if not full.has_section(sec):
            raise ValueError(f"unknown config section [{sec}]")
        for key, val in parser[sec].items():
            if key not in full[sec]:
                raise ValueError(f"unknown key {key!r} in [{sec}]")
            full[sec][key] = val
    kwargs = {"seed": int(full["experiment"]["seed"])}
    hints = typing.get_type_hints(ExperimentConfig)
    for f in dataclasses.fields(ExperimentConfig):
        if f.name != "seed":
            kwargs[f.name] = _build(hints[f.name], f.name, full)
    return ExperimentConfig(**kwargs)
