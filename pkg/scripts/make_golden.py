"""Regenerate the fixed-point engine golden vectors under tests/data.

Writes a seeded random model (EDRN), a recorded 100-step input file and the
engine's outputs plus per-step counters. Only rerun when the datapath is meant
to change; the regression test compares against these files bit for bit.
"""

import argparse
from pathlib import Path

import numpy as np

from prosthesis_rnn.engine.engine import engine_reset, engine_step
from prosthesis_rnn.engine.model import quantize_model, save_quant_model
from prosthesis_rnn.rnn.params import NetArch, init_params

OUT_COLUMNS = "tau_pk,tau_pa,tx_x,tx_h,macs,cycles"


def golden_inputs(rng, steps=100):
    # walking-like errors: slow sinusoids, noise, and a stance flag
    t = np.arange(steps) * 0.005
    e = 0.05 * np.sin(2 * np.pi * 1.0 * t)[:, None] * np.array([1.0, 0.4]) + rng.normal(0, 0.01, (steps, 2))
    de = 0.6 * np.cos(2 * np.pi * 1.0 * t)[:, None] * np.array([1.0, 0.4]) + rng.normal(0, 0.05, (steps, 2))
    s = (np.sin(2 * np.pi * 1.0 * t) > -0.2).astype(float)
    return np.column_stack([e[:, 0], e[:, 1], de[:, 0], de[:, 1], s])


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests" / "data"))
    ap.add_argument("--hidden", type=int, default=16)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(args.seed)
    params = init_params(NetArch(args.hidden), rng)
    model = quantize_model(params, theta_x_raw=4, theta_h_raw=16)  # low θ_h so both delta paths fire
    save_quant_model(model, out / "golden_model.edrn")

    X = golden_inputs(rng)
    np.savetxt(out / "golden_input.csv", X, fmt="%.17g", delimiter=",", header="e_pk,e_pa,de_pk,de_pa,s", comments="")
    state = engine_reset(model)
    rows = []
    for x in X:
        c0 = (state.counters.transmitted_x, state.counters.transmitted_h)
        y = engine_step(model, state, x)
        c = state.counters
        rows.append([y[0], y[1], c.transmitted_x - c0[0], c.transmitted_h - c0[1], state.last_step_macs, state.last_step_cycles])
    np.savetxt(out / "golden_output.csv", np.array(rows), fmt="%.17g", delimiter=",", header=OUT_COLUMNS, comments="")
    print(f"wrote golden vectors to {out}")


if __name__ == "__main__":
    main()
