"""Command-line pipeline: collect -> train -> quantize -> eval-offline -> simulate / bench."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ExperimentConfig, config_hash
from .control import PDController, run_closed_loop, tracking_rmse, write_json, write_runlog
from .dataset import collect, load_dataset, save_dataset, sequences
from .engine.engine import EngineController, cost_report, run_engine
from .engine.model import load_quant_model, quantize_model, save_quant_model
from .rnn.gru import DeltaThresholds, deltagru_forward
from .rnn.params import NetArch, init_params, load_params, save_params
from .rnn.train import evaluate, train

log = logging.getLogger("prosthesis_rnn")

SIM_SEED_OFFSET = 500


class MissingArtifact(RuntimeError):
    pass


class Workdir:
    def __init__(self, root: Path):
        self.root = root

    data = property(lambda self: self.root / "data")
    model = property(lambda self: self.root / "model")
    eval = property(lambda self: self.root / "eval")
    sim = property(lambda self: self.root / "sim")
    bench = property(lambda self: self.root / "bench")
    manifest = property(lambda self: self.data / "manifest.json")
    float_model = property(lambda self: self.model / "float.dgru")
    gru_model = property(lambda self: self.model / "gru_pretrain.dgru")
    quant_model = property(lambda self: self.model / "quant.edrn")

    def require(self, path: Path, stage: str) -> Path:
        if not path.exists():
            raise MissingArtifact(f"missing {path}; run the '{stage}' command first")
        return path


def _stamp(cfg: ExperimentConfig, **extra) -> dict:
    return {"config_hash": config_hash(cfg), "seed": cfg.seed, **extra}


def _write_csv(path: Path, header: list[str], rows: np.ndarray) -> None:
    np.savetxt(path, rows, fmt="%.17g", delimiter=",", header=",".join(header), comments="")


def cmd_collect(cfg: ExperimentConfig, wd: Workdir, args) -> dict:
    ds = collect(cfg, args.n_walks, args.duration)
    save_dataset(ds, wd.data, cfg)
    summary = {"files": len(ds.logs), "ticks": [len(l) for l in ds.logs], "tags": ds.tags}
    log.info("collected %d walks, %d ticks", len(ds.logs), sum(summary["ticks"]))
    return summary


def _split_arrays(cfg: ExperimentConfig, wd: Workdir):
    ds = load_dataset(wd.require(wd.manifest, "collect"))
    T = cfg.data.seq_len
    return ds, sequences(ds.split("train"), T, cfg.data.train_stride), sequences(ds.split("val"), T, cfg.data.eval_stride)


def cmd_train(cfg: ExperimentConfig, wd: Workdir, args) -> dict:
    _, train_xy, val_xy = _split_arrays(cfg, wd)
    arch = NetArch(cfg.train.hidden, cfg.train.n_layers)
    t0 = time.perf_counter()
    result = train(train_xy, val_xy, arch, cfg.train, cfg.seed)
    wall = time.perf_counter() - t0
    wd.model.mkdir(parents=True, exist_ok=True)
    save_params(result.delta, wd.float_model)
    save_params(result.gru, wd.gru_model)
    curve = np.array([[r["epoch"], r["train_loss"], r["val_loss"], 0 if r["stage"] == "pretrain" else 1] for r in result.curve])
    _write_csv(wd.model / "loss_curve.csv", ["epoch", "train_loss", "val_loss", "stage"], curve)
    summary = _stamp(
        cfg,
        hidden=arch.hidden,
        n_params=arch.n_params(),
        n_weights=arch.n_weights(),
        best_epoch_gru=result.best_epoch_gru,
        best_epoch_delta=result.best_epoch_delta,
        val_gru=result.val_gru,
        val_delta=result.val_delta,
        stage_codes={"0": "pretrain", "1": "retrain"},
    )
    write_json(wd.model / "train_summary.json", summary)
    write_json(wd.model / "train_timing.json", {"wall_s": wall, "windows": len(train_xy[0])})
    return summary


def cmd_quantize(cfg: ExperimentConfig, wd: Workdir, args) -> dict:
    params = load_params(wd.require(wd.float_model, "train"))
    tx = cfg.engine.theta_x_raw if args.theta_x_raw is None else args.theta_x_raw
    th = cfg.engine.theta_h_raw if args.theta_h_raw is None else args.theta_h_raw
    model = quantize_model(params, tx, th)
    save_quant_model(model, wd.quant_model)
    fracs = {f"l{i}": {"W_i": ql.f_i.tolist(), "W_h": ql.f_h.tolist()} for i, ql in enumerate(model.layers)}
    summary = _stamp(cfg, theta_x_raw=tx, theta_h_raw=th, frac_bits=fracs, frac_bits_fc=int(model.f_fc),
                     accumulator_bound=model.check_accumulator_bound())  # fmt: skip
    write_json(wd.model / "quant.json", summary)
    return summary


def _test_log(wd: Workdir):
    ds = load_dataset(wd.require(wd.manifest, "collect"))
    return ds.split("test")[0]


def cmd_eval_offline(cfg: ExperimentConfig, wd: Workdir, args) -> dict:
    params = load_params(wd.require(wd.float_model, "train"))
    gru = load_params(wd.require(wd.gru_model, "train"))
    model = load_quant_model(wd.require(wd.quant_model, "quantize"))
    test = _test_log(wd)
    X, Y = test.inputs(), test.labels()
    Xw, Yw = sequences([test], cfg.data.seq_len, 1)
    th = DeltaThresholds(cfg.train.theta_x, cfg.train.theta_h)

    y_engine, _ = run_engine(model, X)
    y_float = deltagru_forward(params, X, th)[0]
    # quantization budget: same network with every delta transmitted, fixed vs float
    y_engine0, _ = run_engine(model.with_thresholds(0, 0), X)
    y_float0 = deltagru_forward(params, X, DeltaThresholds(0.0, 0.0))[0]
    torque_rms = float(np.sqrt(np.mean(Y**2)))
    metrics = _stamp(
        cfg,
        test_l1_gru_windows=evaluate(gru, Xw, Yw),
        test_l1_delta_windows=evaluate(params, Xw, Yw, th),
        test_l1_float_stream=float(np.mean(np.abs(y_float - Y))),
        test_l1_engine_stream=float(np.mean(np.abs(y_engine - Y))),
        test_l1_engine_theta0_stream=float(np.mean(np.abs(y_engine0 - Y))),
        test_l1_float_theta0_stream=float(np.mean(np.abs(y_float0 - Y))),
        quant_max_abs_err_theta0=float(np.max(np.abs(y_engine0 - y_float0))),
        pd_torque_rms=torque_rms,
        theta_x_raw=model.theta_x_raw,
        theta_h_raw=model.theta_h_raw,
    )
    wd.eval.mkdir(parents=True, exist_ok=True)
    n = min(len(X), int(round(args.seconds / 0.005)))
    trace = np.column_stack([test.column("t")[:n], Y[:n, 0], y_engine[:n, 0], Y[:n, 1], y_engine[:n, 1]])
    _write_csv(wd.eval / "offline_trace.csv", ["t", "tau_pd_pk", "tau_rnn_pk", "tau_pd_pa", "tau_rnn_pa"], trace)
    write_json(wd.eval / "offline_metrics.json", metrics)
    return metrics


def _controller(kind: str, cfg: ExperimentConfig, wd: Workdir, model_path: str | None):
    if kind == "pd":
        return PDController(cfg.gait)
    path = Path(model_path) if model_path else wd.require(wd.quant_model, "quantize")
    return EngineController(load_quant_model(path), cfg.engine.mac_lanes, cfg.engine.overhead_cycles)


def cmd_simulate(cfg: ExperimentConfig, wd: Workdir, args) -> dict:
    kinds = ["pd", "rnn"] if args.controller == "both" else [args.controller]
    slopes = list(cfgmod.SLOPE_PRESETS) if args.slope == "all" else [args.slope]
    out = Path(args.out) if args.out else wd.sim
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed * 1000 + SIM_SEED_OFFSET
    table = {}
    for kind in kinds:
        ctrl = _controller(kind, cfg, wd, args.model)
        for slope in slopes:
            runlog = run_closed_loop(ctrl, cfg.gait, cfg.plant, slope, args.duration, seed, cfg.walk)
            stem = out / f"{kind}_{slope}"
            write_runlog(runlog, stem.with_suffix(".csv"), _stamp(cfg))
            portrait = np.column_stack([runlog.column("t"), runlog.column("th_a_pk"), runlog.column("dth_a_pk")])
            _write_csv(out / f"{kind}_{slope}_portrait.csv", ["t", "th_a_pk", "dth_a_pk"], portrait)
            metrics = _stamp(cfg, controller=kind, slope=slope, duration=args.duration, ticks=len(runlog), **tracking_rmse(runlog))
            write_json(out / f"{kind}_{slope}_metrics.json", metrics)
            table[(slope, kind)] = metrics
            log.info("%s %s knee %.4f ankle %.4f", kind, slope, metrics["rmse_knee"], metrics["rmse_ankle"])
    if len(kinds) == 2:
        rows = [[table[(s, "pd")]["rmse_knee"], table[(s, "rnn")]["rmse_knee"], table[(s, "pd")]["rmse_ankle"], table[(s, "rnn")]["rmse_ankle"]] for s in slopes]
        with open(out / "rmse_table.csv", "w") as fh:
            fh.write("slope,pd_knee,rnn_knee,pd_ankle,rnn_ankle\n")
            for s, r in zip(slopes, rows):
                fh.write(s + "," + ",".join(f"{v:.17g}" for v in r) + "\n")
    return {f"{k}_{s}": {m: v[m] for m in ("rmse_knee", "rmse_ankle")} for (s, k), v in table.items()}


def cmd_bench(cfg: ExperimentConfig, wd: Workdir, args) -> dict:
    test = _test_log(wd)
    X = test.inputs()[: args.steps] if args.steps else test.inputs()
    ek = {"mac_lanes": cfg.engine.mac_lanes, "overhead_cycles": cfg.engine.overhead_cycles}
    if args.synthetic_hidden:
        params = init_params(NetArch(args.synthetic_hidden), np.random.default_rng(cfg.seed))
        model = quantize_model(params, cfg.engine.theta_x_raw, cfg.engine.theta_h_raw)
    else:
        model = load_quant_model(Path(args.model) if args.model else wd.require(wd.quant_model, "quantize"))
    t0 = time.perf_counter()
    _, state = run_engine(model, X, **ek)
    wall = time.perf_counter() - t0
    report = cost_report(state, model, clock_mhz=cfg.engine.clock_mhz, **ek)
    _, dense_state = run_engine(model.with_thresholds(0, 0), X, **ek)
    dense = cost_report(dense_state, model, clock_mhz=cfg.engine.clock_mhz, **ek)
    result = _stamp(
        cfg,
        hidden=model.arch.hidden,
        theta_x_raw=model.theta_x_raw,
        theta_h_raw=model.theta_h_raw,
        sparse=report.as_dict(),
        thresholds_zero=dense.as_dict(),
        op_reduction=report.dense_ops / report.effective_ops,
    )
    timing = {"steps": report.steps, "wall_s": wall, "mean_step_us": wall / report.steps * 1e6,
              "realtime_margin": 0.005 / (wall / report.steps)}  # fmt: skip
    wd.bench.mkdir(parents=True, exist_ok=True)
    tag = f"h{model.arch.hidden}" + ("_synthetic" if args.synthetic_hidden else "")
    write_json(wd.bench / f"bench_{tag}.json", result)
    # wall-clock numbers vary run to run; kept apart from the deterministic report
    write_json(wd.bench / f"bench_{tag}_timing.json", timing)
    return {**result, "timing": timing}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="prosthesis-rnn", description=__doc__)
    p.add_argument("--config", help="INI file overriding the preset")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--workdir", default="work", help="artifact directory (default: ./work)")
    p.add_argument("--preset", choices=["desk", "paper"], default="desk")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("collect", help="record PD demonstration walks")
    s.add_argument("--n-walks", type=int)
    s.add_argument("--duration", type=float, help="seconds per walk")

    sub.add_parser("train", help="pretrain GRU, retrain DeltaGRU")

    s = sub.add_parser("quantize", help="convert the trained network to the fixed-point engine format")
    s.add_argument("--theta-x-raw", type=int)
    s.add_argument("--theta-h-raw", type=int)

    s = sub.add_parser("eval-offline", help="torque cloning metrics on the test walk")
    s.add_argument("--seconds", type=float, default=20.0, help="length of the paired torque trace")

    s = sub.add_parser("simulate", help="closed-loop walking with a controller")
    s.add_argument("--controller", choices=["pd", "rnn", "both"], default="pd")
    s.add_argument("--model", help="EDRN file (default: workdir model)")
    s.add_argument("--slope", choices=[*cfgmod.SLOPE_PRESETS, "all"], default="flat")
    s.add_argument("--duration", type=float, default=60.0)
    s.add_argument("--out", help="output directory (default: workdir/sim)")

    s = sub.add_parser("bench", help="cost model and wall-clock per engine step")
    s.add_argument("--model", help="EDRN file (default: workdir model)")
    s.add_argument("--synthetic-hidden", type=int, help="bench an untrained network of this width instead")
    s.add_argument("--steps", type=int, help="limit the number of test ticks")
    return p


COMMANDS = {
    "collect": cmd_collect,
    "train": cmd_train,
    "quantize": cmd_quantize,
    "eval-offline": cmd_eval_offline,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
}


def resolve_config(args) -> ExperimentConfig:
    cfg = cfgmod.preset(args.preset)
    if args.config:
        cfg = cfgmod.load_config(args.config, base=cfg)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    cfg = resolve_config(args)
    wd = Workdir(Path(args.workdir))
    wd.root.mkdir(parents=True, exist_ok=True)
    cfgmod.save_config(cfg, wd.root / "config.ini")
    try:
        result = COMMANDS[args.command](cfg, wd, args)
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return 0
