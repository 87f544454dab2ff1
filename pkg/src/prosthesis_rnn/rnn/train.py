"""L1 behavioral-cloning objective, Adam, and the pretrain -> retrain schedule."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..config import StageSchedule, TrainConfig
from .gru import DeltaThresholds, deltagru_backward, deltagru_forward, gru_backward, gru_forward
from .params import NetArch, NetworkParams, init_params

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    pass


def l1_loss(y, y_hat):
    """Mean absolute error over batch, time and output dims, with its subgradient."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {y_hat.shape}")
    diff = y_hat - y
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


class Adam:
    def __init__(self, params: NetworkParams, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in params.arrays()]
        self.v = [np.zeros_like(a) for a in params.arrays()]
        self.t = 0

    def step(self, grads: NetworkParams) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params.arrays(), grads.arrays(), self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.params.version += 1


def clip_grad_norm(grads: NetworkParams, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.arrays()))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.arrays():
            g *= scale
    return norm


def evaluate(params: NetworkParams, X, Y, thresholds: DeltaThresholds | None = None, chunk: int = 2048) -> float:
    """L1 over windows, each starting from a zero state; chunked to bound memory."""
    total = 0.0
    for a in range(0, len(X), chunk):
        xb, yb = X[a : a + chunk], Y[a : a + chunk]
        if thresholds is None:
            y_hat = gru_forward(params, xb)[0]
        else:
            y_hat = deltagru_forward(params, xb, thresholds)[0]
        total += np.abs(y_hat - yb).sum()
    return float(total / Y.size)


@dataclass
class TrainResult:
    gru: NetworkParams  # best pretrain (dense GRU) network
    delta: NetworkParams  # best retrain (DeltaGRU) network
    curve: list[dict] = field(default_factory=list)
    best_epoch_gru: int = 0
    best_epoch_delta: int = 0
    val_gru: float = math.inf
    val_delta: float = math.inf


def _run_stage(params, X, Y, Xv, Yv, sched: StageSchedule, tc: TrainConfig, rng, thresholds, stage, epoch0, curve):
    opt = Adam(params, sched.lr, tc.beta1, tc.beta2, tc.eps)
    best, best_val, best_epoch = params.copy(), math.inf, epoch0
    n = len(X)
    for e in range(1, sched.epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        for a in range(0, n, sched.batch):
            idx = order[a : a + sched.batch]
            xb, yb = X[idx], Y[idx]
            if thresholds is None:
                y_hat, _, cache = gru_forward(params, xb)
                loss, gy = l1_loss(yb, y_hat)
                grads, _ = gru_backward(cache, gy)
            else:
                y_hat, _, cache = deltagru_forward(params, xb, thresholds)
                loss, gy = l1_loss(yb, y_hat)
                grads = deltagru_backward(cache, gy)
            if not math.isfinite(loss):
                raise TrainingDivergence(f"{stage} loss became {loss} at epoch {epoch0 + e}")
            clip_grad_norm(grads, tc.clip_norm)
            opt.step(grads)
            loss_sum += loss * len(idx)
        train_loss = loss_sum / n
        val_loss = evaluate(params, Xv, Yv, thresholds)
        if not math.isfinite(val_loss):
            raise TrainingDivergence(f"{stage} validation loss became {val_loss} at epoch {epoch0 + e}")
        epoch = epoch0 + e
        curve.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "stage": stage})
        log.info("epoch %d (%s) train %.4f val %.4f", epoch, stage, train_loss, val_loss)
        if val_loss < best_val:
            best, best_val, best_epoch = params.copy(), val_loss, epoch
    return best, best_val, best_epoch


def train(train_xy, val_xy, arch: NetArch, tc: TrainConfig, seed: int) -> TrainResult:
    """Pretrain a dense GRU, then retrain the best pretrain network as a DeltaGRU.

    Each stage keeps the parameters with the lowest validation L1 seen within
    that stage. Deterministic for a given seed.
    """
    X, Y = train_xy
    Xv, Yv = val_xy
    rng = np.random.default_rng(seed)
    params = init_params(arch, rng)
    curve: list[dict] = []
    gru_best, val_gru, ep_gru = _run_stage(params, X, Y, Xv, Yv, tc.pretrain, tc, rng, None, "pretrain", 0, curve)
    thresholds = DeltaThresholds(tc.theta_x, tc.theta_h)
    params = gru_best.copy()
    delta_best, val_delta, ep_delta = _run_stage(
        params, X, Y, Xv, Yv, tc.retrain, tc, rng, thresholds, "retrain", tc.pretrain.epochs, curve
    )
    return TrainResult(gru_best, delta_best, curve, ep_gru, ep_delta, val_gru, val_delta)
