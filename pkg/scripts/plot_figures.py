"""Render figures from a finished workdir (needs the ``plots`` extra).

    python scripts/plot_figures.py --workdir runs/desk --out figures

Produces loss_curve.png, offline_trace.png and phase_portraits.png, and prints
the knee/ankle RMSE table if the closed-loop runs exist.
"""

import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _table(path):
    return np.genfromtxt(path, delimiter=",", names=True)


def plot_loss(wd, out):
    d = _table(wd / "model" / "loss_curve.csv")
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for stage, label in ((0, "GRU pretrain"), (1, "DeltaGRU retrain")):
        m = d["stage"] == stage
        x = np.arange(1, len(d) + 1)[m]
        ax.plot(x, d["train_loss"][m], "-", label=f"{label} train")
        ax.plot(x, d["val_loss"][m], "--", label=f"{label} val")
    ax.set_xlabel("epoch (cumulative)")
    ax.set_ylabel("L1 loss [N·m]")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out / "loss_curve.png", dpi=150)


def plot_trace(wd, out):
    d = _table(wd / "eval" / "offline_trace.csv")
    fig, axes = plt.subplots(2, 1, sharex=True, figsize=(8, 4.5))
    for ax, j, name in zip(axes, ("pk", "pa"), ("knee", "ankle")):
        ax.plot(d["t"], d[f"tau_pd_{j}"], lw=1, label="PD")
        ax.plot(d["t"], d[f"tau_rnn_{j}"], lw=1, label="engine")
        ax.set_ylabel(f"{name} torque [N·m]")
    axes[0].legend(fontsize=8)
    axes[-1].set_xlabel("t [s]")
    fig.tight_layout()
    fig.savefig(out / "offline_trace.png", dpi=150)


def plot_portraits(wd, out):
    slopes = [s for s in ("flat", "uphill", "downhill") if (wd / "sim" / f"pd_{s}_portrait.csv").exists()]
    if not slopes:
        return
    fig, axes = plt.subplots(1, len(slopes), figsize=(4 * len(slopes), 3.5), squeeze=False)
    for ax, slope in zip(axes[0], slopes):
        for kind in ("pd", "rnn"):
            p = wd / "sim" / f"{kind}_{slope}_portrait.csv"
            if p.exists():
                d = _table(p)
                ax.plot(d["th_a_pk"], d["dth_a_pk"], lw=0.5, label=kind.upper())
        ax.set_title(slope)
        ax.set_xlabel("knee angle [rad]")
    axes[0][0].set_ylabel("knee velocity [rad/s]")
    axes[0][0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out / "phase_portraits.png", dpi=150)


def print_rmse(wd):
    p = wd / "sim" / "rmse_table.csv"
    if not p.exists():
        return
    with open(p, newline="") as f:
        rows = list(csv.DictReader(f))
    print(f"{'slope':<9}{'PD knee':>10}{'RNN knee':>10}{'ratio':>7}{'PD ankle':>10}{'RNN ankle':>10}")
    for r in rows:
        pk, rk = float(r["pd_knee"]), float(r["rnn_knee"])
        print(f"{r['slope']:<9}{pk:>10.4f}{rk:>10.4f}{rk / pk:>7.2f}{float(r['pd_ankle']):>10.4f}{float(r['rnn_ankle']):>10.4f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--workdir", type=Path, required=True)
    ap.add_argument("--out", type=Path, default=Path("figures"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    if (args.workdir / "model" / "loss_curve.csv").exists():
        plot_loss(args.workdir, args.out)
    if (args.workdir / "eval" / "offline_trace.csv").exists():
        plot_trace(args.workdir, args.out)
    plot_portraits(args.workdir, args.out)
    print_rmse(args.workdir)


if __name__ == "__main__":
    main()
