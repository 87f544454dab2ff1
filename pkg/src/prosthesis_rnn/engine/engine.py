"""Integer DeltaGRU inference with temporal-sparsity skipping and a MAC-array cycle model."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..control import ControlInput, ControlOutput
from .fixed import ACC_MAX, ACC_MIN, ACT_FRAC, ACT_MAX, ACT_MIN, SIGMOID_LUT, TANH_LUT, lut_eval, quantize_act
from .model import AccumulatorOverflow, QuantModel


@dataclass
class Counters:
    transmitted_x: int = 0
    skipped_x: int = 0
    transmitted_h: int = 0
    skipped_h: int = 0
    mac_ops: int = 0  # GRU delta MACs
    fc_macs: int = 0
    cycles: int = 0
    steps: int = 0


@dataclass
class LayerStateFx:
    x_hat: np.ndarray
    h_hat: np.ndarray
    h: np.ndarray
    acc_i: np.ndarray  # frac = weight frac + 8, per row
    acc_h: np.ndarray


@dataclass
class DeltaStateFx:
    layers: list[LayerStateFx]
    counters: Counters = field(default_factory=Counters)
    last_step_macs: int = 0
    last_step_cycles: int = 0


@dataclass
class CostModel:
    mac_lanes: int
    overhead_cycles: int
    steps: int
    dense_ops_per_step: int
    effective_ops: int
    dense_ops: int
    effective_ops_per_step: float
    cycles: int
    cycles_per_step: float
    speedup: float
    latency_us_per_step: float
    sparsity_x: float
    sparsity_h: float

    def as_dict(self) -> dict:
        return asdict(self)


def engine_reset(model: QuantModel) -> DeltaStateFx:
    layers = []
    for l, ql in enumerate(model.layers):
        n_in = model.arch.layer_input_dim(l)
        M = model.arch.hidden
        layers.append(
            LayerStateFx(
                np.zeros(n_in, dtype=np.int64),
                np.zeros(M, dtype=np.int64),
                np.zeros(M, dtype=np.int64),
                ql.b_i << ql.row_shift_i(),
                ql.b_h << ql.row_shift_h(),
            )
        )
    return DeltaStateFx(layers)


@dataclass
class _LayerPlan:
    W_i: np.ndarray  # (3M, in) float64 holding the int8 values, for BLAS
    W_h: np.ndarray  # (3M, M)
    shift_i: np.ndarray  # (3M,) accumulator frac minus 8
    shift_h: np.ndarray
    half_i: np.ndarray  # rounding offsets for the shifts above
    half_h: np.ndarray


@dataclass
class _Plan:
    layers: list[_LayerPlan]
    W_fc: np.ndarray  # float64 copy of the int8 output weights
    b_fc: np.ndarray  # bias at accumulator frac
    half_fc: int


def _plan(model: QuantModel) -> _Plan:
    """Per-model constants for engine_step, built once and cached on the model.

    Delta matrix-vector products run through float64 BLAS. This is exact: products are at most
    2^7 * 2^16 and a row sums at most 2^9 of them, far inside the 2^53 integer range.
    """
    plan = model.__dict__.get("_engine_plan")
    if plan is None:
        layers = []
        for ql in model.layers:
            si, sh = ql.row_shift_i(), ql.row_shift_h()
            layers.append(
                _LayerPlan(
                    ql.W_i.astype(float),
                    ql.W_h.astype(float),
                    si,
                    sh,
                    (np.int64(1) << si) >> 1,
                    (np.int64(1) << sh) >> 1,
                )
            )
        plan = _Plan(layers, model.W_fc.astype(float), model.b_fc << model.f_fc, (1 << model.f_fc) >> 1)
        model.__dict__["_engine_plan"] = plan
    return plan


def _check_acc(acc, where):
    if acc.max() > ACC_MAX or acc.min() < ACC_MIN:
        raise AccumulatorOverflow(f"{where} accumulator left the 32-bit range")


def dense_ops_per_step(arch) -> int:
    return 2 * arch.n_weights()


def engine_step(model: QuantModel, state: DeltaStateFx, x, mac_lanes: int = 8, overhead_cycles: int = 256):
    """One control tick. Updates ``state`` in place and returns the two torques.

    Inputs are quantized to Q8.8; thresholds compare raw integers (inclusive).
    """
    plan = _plan(model)
    M = model.arch.hidden
    th_x, th_h = model.theta_x_raw, model.theta_h_raw
    c = state.counters
    v = quantize_act(x)
    step_macs = 0
    step_cycles = overhead_cycles
    half = 1 << (ACT_FRAC - 1)
    for l, (lp, st) in enumerate(zip(plan.layers, state.layers)):
        d = v - st.x_hat
        mx = np.abs(d) >= th_x
        nx = int(np.count_nonzero(mx))
        if nx:
            # skipped columns get a zero delta; the product is the same as a gather
            d[~mx] = 0
            st.acc_i += (lp.W_i @ d).astype(np.int64)
            st.x_hat[mx] = v[mx]
        d = st.h - st.h_hat
        mh = np.abs(d) >= th_h
        nh = int(np.count_nonzero(mh))
        if nh:
            d[~mh] = 0
            st.acc_h += (lp.W_h @ d).astype(np.int64)
            st.h_hat[mh] = st.h[mh]
        _check_acc(st.acc_i, f"layer {l} input")
        _check_acc(st.acc_h, f"layer {l} recurrent")

        nnz = nx + nh
        c.transmitted_x += nx
        c.skipped_x += mx.size - nx
        c.transmitted_h += nh
        c.skipped_h += M - nh
        step_macs += 3 * M * nnz
        step_cycles += -(-3 * M * nnz // mac_lanes)

        # accumulators back to Q8.8 (round half up)
        gi = (st.acc_i + lp.half_i) >> lp.shift_i
        gh = (st.acc_h + lp.half_h) >> lp.shift_h
        rz = lut_eval(SIGMOID_LUT, gi[: 2 * M] + gh[: 2 * M])
        r, z = rz[:M], rz[M:]
        n = lut_eval(TANH_LUT, gi[2 * M :] + ((r * gh[2 * M :] + half) >> ACT_FRAC))
        # convex mix of two values in [-1, 1]: stays inside Q8.8 without a clamp
        st.h = n + ((z * (st.h - n) + half) >> ACT_FRAC)
        v = st.h
    acc = (plan.W_fc @ v).astype(np.int64) + plan.b_fc
    y = np.clip((acc + plan.half_fc) >> model.f_fc, ACT_MIN, ACT_MAX)
    c.mac_ops += step_macs
    c.fc_macs += model.W_fc.size
    c.cycles += step_cycles
    c.steps += 1
    state.last_step_macs = step_macs
    state.last_step_cycles = step_cycles
    return y / float(1 << ACT_FRAC)


def run_engine(model: QuantModel, X, state: DeltaStateFx | None = None, **cost_kw):
    """Step through a (T, N) input sequence; returns (T, Q) outputs and the final state."""
    state = engine_reset(model) if state is None else state
    X = np.asarray(X, dtype=float)
    out = np.empty((X.shape[0], model.arch.output_dim))
    for t in range(X.shape[0]):
        out[t] = engine_step(model, state, X[t], **cost_kw)
    return out, state


def cost_report(state: DeltaStateFx, model: QuantModel, mac_lanes: int = 8, overhead_cycles: int = 256, clock_mhz: float = 125.0) -> CostModel:
    c = state.counters
    if c.steps < 1:
        raise ValueError("cost_report needs at least one engine step")
    dense_step = dense_ops_per_step(model.arch)
    effective = 2 * (c.mac_ops + c.fc_macs)
    dense = dense_step * c.steps
    nx = c.transmitted_x + c.skipped_x
    nh = c.transmitted_h + c.skipped_h
    return CostModel(
        mac_lanes=mac_lanes,
        overhead_cycles=overhead_cycles,
        steps=c.steps,
        dense_ops_per_step=dense_step,
        effective_ops=effective,
        dense_ops=dense,
        effective_ops_per_step=effective / c.steps,
        cycles=c.cycles,
        cycles_per_step=c.cycles / c.steps,
        speedup=dense / effective if effective else math.inf,
        latency_us_per_step=c.cycles / c.steps / clock_mhz,
        sparsity_x=c.skipped_x / nx if nx else 0.0,
        sparsity_h=c.skipped_h / nh if nh else 0.0,
    )


class EngineController:
    """Closed-loop adapter: one engine instance, stepped once per control tick."""

    name = "rnn"

    def __init__(self, model: QuantModel, mac_lanes: int = 8, overhead_cycles: int = 256):
        self.model = model
        self.cost_kw = {"mac_lanes": mac_lanes, "overhead_cycles": overhead_cycles}
        self.state = engine_reset(model)

    def reset(self) -> None:
        self.state = engine_reset(self.model)

    def __call__(self, inp: ControlInput) -> ControlOutput:
        y = engine_step(self.model, self.state, inp.as_array(), **self.cost_kw)
        return ControlOutput(float(y[0]), float(y[1]))
