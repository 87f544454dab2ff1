import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from prosthesis_rnn.config import GaitConfig, PlantConfig
from prosthesis_rnn.control import (
    COLUMNS,
    ClosedLoopDivergence,
    ControlInput,
    ControlOutput,
    PDController,
    pd_control,
    read_runlog,
    rmse,
    run_closed_loop,
    tracking_rmse,
    write_runlog,
)

GAIT = GaitConfig()
PLANT = PlantConfig()


def test_pd_zero_error():
    assert pd_control(ControlInput(0, 0, 0, 0, 1), GAIT) == ControlOutput(0.0, 0.0)


def test_pd_arithmetic_and_sign():
    cfg = GaitConfig(Kp_knee=50.0, Kd_knee=2.0)
    out = pd_control(ControlInput(0.1, 0.0, -0.5, 0.0, 1), cfg)
    assert abs(out.tau_pk) == pytest.approx(4.0)
    assert out.tau_pk < 0  # positive error (knee ahead of target) pushes back
    assert out.tau_pa == 0.0


def test_pd_saturates():
    cfg = GaitConfig(Kp_knee=1000.0, tau_max=60.0)
    assert abs(pd_control(ControlInput(1.0, 0, 0, 0, 0), cfg).tau_pk) == 60.0


err = st.floats(-0.01, 0.01)


@given(err, err, err, err, err, err, err, err, st.floats(-2, 2), st.floats(-2, 2))
def test_pd_linear_below_saturation(a1, a2, a3, a4, b1, b2, b3, b4, a, b):
    i1, i2 = ControlInput(a1, a2, a3, a4, 1), ControlInput(b1, b2, b3, b4, 1)
    mix = ControlInput(a * a1 + b * b1, a * a2 + b * b2, a * a3 + b * b3, a * a4 + b * b4, 1)
    o1, o2, om = pd_control(i1, GAIT), pd_control(i2, GAIT), pd_control(mix, GAIT)
    assume(max(abs(om.tau_pk), abs(om.tau_pa)) < GAIT.tau_max)
    assert om.tau_pk == pytest.approx(a * o1.tau_pk + b * o2.tau_pk, abs=1e-9)
    assert om.tau_pa == pytest.approx(a * o1.tau_pa + b * o2.tau_pa, abs=1e-9)


def test_rmse():
    assert rmse([1, 2, 3], [1, 2, 3]) == 0.0
    assert rmse([1.5, 2.5], [1.0, 2.0]) == pytest.approx(0.5)
    assert rmse([0, 1], [1, 1]) == pytest.approx(np.sqrt(0.5))
    with pytest.raises(ValueError):
        rmse([1, 2], [1])


def test_single_tick():
    log = run_closed_loop(PDController(GAIT), GAIT, PLANT, "flat", 0.005, seed=1)
    assert len(log) == 1


@pytest.mark.parametrize("duration", [0.1, 1.0, 2.345])
def test_tick_count_and_spacing(duration):
    log = run_closed_loop(PDController(GAIT), GAIT, PLANT, "flat", duration, seed=1)
    assert len(log) == round(duration * 200)
    assert np.allclose(np.diff(log.column("t")), 0.005, atol=1e-12)


def test_closed_loop_deterministic():
    a = run_closed_loop(PDController(GAIT), GAIT, PLANT, "uphill", 3.0, seed=4)
    b = run_closed_loop(PDController(GAIT), GAIT, PLANT, "uphill", 3.0, seed=4)
    assert np.array_equal(a.data, b.data) and a.meta == b.meta


class Renamed:
    """PD under another name: the loop must treat it exactly like PD."""

    name = "other"

    def __init__(self):
        self.inner = PDController(GAIT)

    def reset(self):
        self.inner.reset()

    def __call__(self, inp):
        return self.inner(inp)


def test_controller_agnostic():
    a = run_closed_loop(PDController(GAIT), GAIT, PLANT, "flat", 2.0, seed=2)
    b = run_closed_loop(Renamed(), GAIT, PLANT, "flat", 2.0, seed=2)
    assert np.array_equal(a.data, b.data)
    assert set(a.meta) == set(b.meta)


class Exploding:
    name = "nan"

    def reset(self):
        pass

    def __call__(self, inp):
        return ControlOutput(float("nan"), 0.0)


def test_divergence_reports_tick():
    with pytest.raises(ClosedLoopDivergence) as exc:
        run_closed_loop(Exploding(), GAIT, PLANT, "flat", 1.0, seed=0)
    assert exc.value.tick == 0 and "tick 0" in str(exc.value)


def test_pd_flat_rmse_in_band():
    log = run_closed_loop(PDController(GAIT), GAIT, PLANT, "flat", 60.0, seed=11)
    r = tracking_rmse(log)
    assert 0.02 <= r["rmse_knee"] <= 0.10
    assert np.all(np.abs(log.column("tau_pk")) <= GAIT.tau_max)


def test_unknown_slope():
    with pytest.raises(ValueError):
        run_closed_loop(PDController(GAIT), GAIT, PLANT, "sideways", 1.0, seed=0)


def test_runlog_csv_roundtrip(tmp_path):
    log = run_closed_loop(PDController(GAIT), GAIT, PLANT, "downhill", 2.0, seed=5)
    path = tmp_path / "walk.csv"
    write_runlog(log, path, {"config_hash": "abc", "seed": 5})
    assert path.read_text().splitlines()[0] == ",".join(COLUMNS)
    back = read_runlog(path)
    assert np.array_equal(back.data, log.data)
    assert back.meta["controller"] == "pd" and back.meta["config_hash"] == "abc"
