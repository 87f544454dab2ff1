"""Demonstration collection, train/val/test splits and sequence windowing."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .config import ExperimentConfig, config_hash
from .control import PDController, RunLog, read_runlog, run_closed_loop, write_json, write_runlog

TAGS = ("train", "val", "test")


@dataclass
class Dataset:
    logs: list[RunLog]
    tags: list[str]
    T: int = 100
    stride: int = 1
    paths: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.logs) != len(self.tags):
            raise ValueError("one tag per file required")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        for tag in self.tags:
            if tag not in TAGS:
                raise ValueError(f"unknown tag {tag!r}")
        for log in self.logs:
            if len(log) < self.T:
                raise ValueError(f"file with {len(log)} ticks is shorter than T={self.T}")

    def split(self, tag: str) -> list[RunLog]:
        return [log for log, t in zip(self.logs, self.tags) if t == tag]


def split_tags(n_walks: int) -> list[str]:
    """All but the last two walks train; then one validation and one test walk."""
    if n_walks < 3:
        raise ValueError("need at least 3 walks for a train/val/test split")
    return ["train"] * (n_walks - 2) + ["val", "test"]


def n_windows(length: int, T: int, stride: int) -> int:
    if length < T:
        raise ValueError(f"sequence of {length} ticks is shorter than T={T}")
    return (length - T) // stride + 1


def window(log: RunLog, T: int, stride: int) -> tuple[int, Iterator[tuple[np.ndarray, np.ndarray]]]:
    """Count and lazy iterator of (inputs T x 5, labels T x 2); window k starts at k*stride."""
    count = n_windows(len(log), T, stride)
    x, y = log.inputs(), log.labels()

    def gen():
        for k in range(count):
            a = k * stride
            yield x[a : a + T], y[a : a + T]

    return count, gen()


def sequences(logs: list[RunLog], T: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack all windows of ``logs`` into (B, T, 5) inputs and (B, T, 2) labels."""
    xs, ys = [], []
    for log in logs:
        count = n_windows(len(log), T, stride)
        # sliding_window_view puts the window axis last: (n, features, T)
        xw = sliding_window_view(log.inputs(), T, axis=0)[::stride][:count]
        yw = sliding_window_view(log.labels(), T, axis=0)[::stride][:count]
        xs.append(np.ascontiguousarray(xw.transpose(0, 2, 1)))
        ys.append(np.ascontiguousarray(yw.transpose(0, 2, 1)))
    return np.concatenate(xs), np.concatenate(ys)


def walk_seeds(base_seed: int, n_walks: int) -> list[int]:
    return [base_seed * 1000 + i for i in range(n_walks)]


def collect(cfg: ExperimentConfig, n_walks: int | None = None, walk_duration: float | None = None, seeds=None) -> Dataset:
    """Record ``n_walks`` PD-controlled flat walks. Each walk gets its own sensor-noise
    stream and a uniform +/- ``walk_speed_spread`` hip-speed scale drawn from its seed."""
    n_walks = cfg.data.n_walks if n_walks is None else n_walks
    walk_duration = cfg.data.walk_duration if walk_duration is None else walk_duration
    seeds = walk_seeds(cfg.seed, n_walks) if seeds is None else list(seeds)
    tags = split_tags(n_walks)
    if len(seeds) != n_walks:
        raise ValueError("one seed per walk required")
    logs = []
    for seed in seeds:
        spread = cfg.walk.walk_speed_spread
        scale = float(np.random.default_rng([seed, 1]).uniform(1 - spread, 1 + spread))
        log = run_closed_loop(PDController(cfg.gait), cfg.gait, cfg.plant, "flat", walk_duration, seed, cfg.walk, scale)
        logs.append(log)
    return Dataset(logs, tags, cfg.data.seq_len, cfg.data.train_stride)


def save_dataset(ds: Dataset, directory: str | Path, cfg: ExperimentConfig) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {"config_hash": config_hash(cfg), "seed": cfg.seed}
    entries = []
    for i, (log, tag) in enumerate(zip(ds.logs, ds.tags)):
        name = f"walk_{i:02d}.csv"
        write_runlog(log, directory / name, meta)
        entries.append({"path": name, "tag": tag, "ticks": len(log)})
    manifest = directory / "manifest.json"
    write_json(manifest, {"files": entries, "T": ds.T, "stride": ds.stride, **meta})
    return manifest


def load_dataset(manifest: str | Path) -> Dataset:
    manifest = Path(manifest)
    meta = json.loads(manifest.read_text())
    logs, tags, paths = [], [], []
    for entry in meta["files"]:
        path = manifest.parent / entry["path"]
        logs.append(read_runlog(path))
        tags.append(entry["tag"])
        paths.append(str(path))
    return Dataset(logs, tags, meta["T"], meta["stride"], paths)
