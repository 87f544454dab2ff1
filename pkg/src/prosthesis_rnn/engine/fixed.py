"""Two's-complement fixed-point helpers and interpolated nonlinearity tables.

Activations are Q8.8 (int16, 8 fractional bits). Weights are int8 with a
per-tensor number of fractional bits. Rounding to a coarser format uses
round-to-nearest-even when quantizing real values and round-half-up
(add half, arithmetic shift) inside the integer datapath.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ACT_FRAC = 8
ACT_MIN, ACT_MAX = -(1 << 15), (1 << 15) - 1
W_MIN, W_MAX = -(1 << 7), (1 << 7) - 1
ACC_MIN, ACC_MAX = -(1 << 31), (1 << 31) - 1

# tables span [-8, 8) in 256 segments of 1/16 (16 raw Q8.8 units each)
LUT_SEGMENTS = 256
LUT_LO = -8 << ACT_FRAC
LUT_HI = (8 << ACT_FRAC) - 1
_SEG_SHIFT = 4


@dataclass(frozen=True)
class QFormat:
    total_bits: int
    frac_bits: int

    def __post_init__(self):
        if self.total_bits not in (8, 16):
            raise ValueError("total_bits must be 8 or 16")
        if not 0 <= self.frac_bits < self.total_bits:
            raise ValueError("frac_bits must lie in [0, total_bits)")

    @property
    def raw_min(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def raw_max(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    def quantize(self, x) -> np.ndarray:
        """Round-to-nearest-even then saturate."""
        raw = np.rint(np.asarray(x, dtype=float) * (1 << self.frac_bits))
        return np.minimum(np.maximum(raw, self.raw_min), self.raw_max).astype(np.int64)

    def dequantize(self, raw) -> np.ndarray:
        return np.asarray(raw, dtype=float) / (1 << self.frac_bits)


Q8_8 = QFormat(16, ACT_FRAC)


def quantize_act(x) -> np.ndarray:
    return Q8_8.quantize(x)


def weight_frac_bits(max_abs: float) -> int:
    """Largest f <= 7 such that max_abs < 2**(7 - f)."""
    if not math.isfinite(max_abs) or max_abs >= 128.0:
        raise ValueError(f"weight magnitude {max_abs} is not representable in 8 bits")
    for f in range(7, -1, -1):
        if max_abs < 2.0 ** (7 - f):
            return f
    raise AssertionError("unreachable")


def quantize_weights(w) -> tuple[np.ndarray, int]:
    w = np.asarray(w, dtype=float)
    f = weight_frac_bits(float(np.max(np.abs(w))) if w.size else 0.0)
    return QFormat(8, f).quantize(w), f


def round_shift(v, shift):
    """Arithmetic right shift with round-half-up; ``shift`` may be an array, 0 allowed."""
    shift = np.asarray(shift, dtype=np.int64)
    return (v + ((np.int64(1) << shift) >> 1)) >> shift


def build_lut(fn) -> np.ndarray:
    """Q8.8 samples of ``fn`` at the 257 segment breakpoints -8, -8+1/16, ..., 8."""
    xs = np.arange(LUT_SEGMENTS + 1) / 16.0 - 8.0
    return Q8_8.quantize(fn(xs))


SIGMOID_LUT = build_lut(lambda x: 1.0 / (1.0 + np.exp(-x)))
TANH_LUT = build_lut(np.tanh)


def lut_eval(lut: np.ndarray, v) -> np.ndarray:
    """Piecewise-linear table lookup on Q8.8 input, Q8.8 output; input clamped to [-8, 8)."""
    u = np.minimum(np.maximum(v, LUT_LO), LUT_HI) - LUT_LO
    idx = u >> _SEG_SHIFT
    frac = u & ((1 << _SEG_SHIFT) - 1)
    lo = lut[idx]
    half = 1 << (_SEG_SHIFT - 1)
    return lo + (((lut[idx + 1] - lo) * frac + half) >> _SEG_SHIFT)
