"""Quantized DeltaGRU model and the EDRN binary format."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..rnn.params import GRULayer, NetArch, NetworkParams
from .fixed import ACC_MAX, ACT_FRAC, ACT_MAX, Q8_8, QFormat, quantize_weights

MAGIC = b"EDRN"
FORMAT_VERSION = 1
_KIND_WEIGHT, _KIND_BIAS = 0, 1


class AccumulatorOverflow(RuntimeError):
    pass


@dataclass
class QuantLayer:
    W_i: np.ndarray  # (3M, in) int8 values, stored as int64
    W_h: np.ndarray  # (3M, M)
    f_i: np.ndarray  # (3,) frac bits of W_ir, W_iz, W_in
    f_h: np.ndarray  # (3,) frac bits of W_hr, W_hz, W_hn
    b_i: np.ndarray  # (3M,) Q8.8 raw
    b_h: np.ndarray  # (3M,) Q8.8 raw

    def row_shift_i(self) -> np.ndarray:
        return np.repeat(self.f_i, self.W_i.shape[0] // 3)

    def row_shift_h(self) -> np.ndarray:
        return np.repeat(self.f_h, self.W_h.shape[0] // 3)


@dataclass
class QuantModel:
    arch: NetArch
    layers: list[QuantLayer]
    W_fc: np.ndarray  # (Q, M) int8
    f_fc: int
    b_fc: np.ndarray  # (Q,) Q8.8 raw
    theta_x_raw: int = 4
    theta_h_raw: int = 128
    act_format: QFormat = Q8_8

    def with_thresholds(self, theta_x_raw: int, theta_h_raw: int) -> QuantModel:
        return QuantModel(self.arch, self.layers, self.W_fc, self.f_fc, self.b_fc, theta_x_raw, theta_h_raw, self.act_format)

    def check_accumulator_bound(self) -> int:
        """Worst-case |accumulator| over all rows; raises if it can exceed 32 bits.

        An accumulator always equals ``bias << f + W @ v_hat`` with int16 ``v_hat``,
        so ``|bias| << f + 32768 * sum|w_row|`` bounds it at every step.
        """
        worst = 0
        for layer in self.layers:
            for W, b, shift in ((layer.W_i, layer.b_i, layer.row_shift_i()), (layer.W_h, layer.b_h, layer.row_shift_h())):
                bound = (np.abs(b) << shift) + (ACT_MAX + 1) * np.abs(W).sum(axis=1)
                worst = max(worst, int(bound.max()))
        if worst > ACC_MAX:
            raise AccumulatorOverflow(f"accumulator bound {worst} exceeds 32-bit range")
        return worst


def _quant_gates(W):
    M = W.shape[0] // 3
    raws, fracs = zip(*(quantize_weights(W[g * M : (g + 1) * M]) for g in range(3)))
    return np.concatenate(raws), np.array(fracs, dtype=np.int64)


def quantize_model(params: NetworkParams, theta_x_raw: int = 4, theta_h_raw: int = 128) -> QuantModel:
    """Per-tensor power-of-two int8 weights (each gate matrix is its own tensor), Q8.8 biases."""
    params.validate()
    layers = []
    for layer in params.layers:
        W_i, f_i = _quant_gates(layer.W_i)
        W_h, f_h = _quant_gates(layer.W_h)
        layers.append(QuantLayer(W_i, W_h, f_i, f_h, Q8_8.quantize(layer.b_i), Q8_8.quantize(layer.b_h)))
    W_fc, f_fc = quantize_weights(params.W_fc)
    model = QuantModel(params.arch, layers, W_fc, f_fc, Q8_8.quantize(params.b_fc), theta_x_raw, theta_h_raw)
    model.check_accumulator_bound()
    return model


def dequantize_model(model: QuantModel) -> NetworkParams:
    """Float network holding exactly the quantized values (useful as a reference)."""
    layers = []
    for ql in model.layers:
        layers.append(
            GRULayer(
                ql.W_i / (2.0 ** ql.row_shift_i())[:, None],
                ql.W_h / (2.0 ** ql.row_shift_h())[:, None],
                Q8_8.dequantize(ql.b_i),
                Q8_8.dequantize(ql.b_h),
            )
        )
    return NetworkParams(model.arch, layers, model.W_fc / 2.0**model.f_fc, Q8_8.dequantize(model.b_fc))


# ---------------------------------------------------------------------------
# EDRN binary: little-endian
#   magic "EDRN", u32 version, u32 n_layers, u32 input_dim, u32 hidden, u32 output_dim,
#   u8 act total_bits, u8 act frac_bits,
#   tensor records: u8 kind (0 = int8 weight, 1 = int16 bias), i8 frac_bits, u8 ndim,
#                   u32 dims[ndim], raw data
#   i16 theta_x_raw, i16 theta_h_raw
# Record order per layer: W_ir W_iz W_in W_hr W_hz W_hn b_i b_h; then W_fc, b_fc.


def _records(model: QuantModel):
    M = model.arch.hidden
    for ql in model.layers:
        for W, f in ((ql.W_i, ql.f_i), (ql.W_h, ql.f_h)):
            for g in range(3):
                yield _KIND_WEIGHT, int(f[g]), W[g * M : (g + 1) * M]
        yield _KIND_BIAS, ACT_FRAC, ql.b_i
        yield _KIND_BIAS, ACT_FRAC, ql.b_h
    yield _KIND_WEIGHT, model.f_fc, model.W_fc
    yield _KIND_BIAS, ACT_FRAC, model.b_fc


def save_quant_model(model: QuantModel, path: str | Path) -> None:
    a = model.arch
    out = bytearray(MAGIC)
    out += struct.pack("<5I", FORMAT_VERSION, a.n_layers, a.input_dim, a.hidden, a.output_dim)
    out += struct.pack("<2B", model.act_format.total_bits, model.act_format.frac_bits)
    for kind, frac, data in _records(model):
        out += struct.pack("<BbB", kind, frac, data.ndim)
        out += struct.pack(f"<{data.ndim}I", *data.shape)
        out += data.astype("<i1" if kind == _KIND_WEIGHT else "<i2").tobytes()
    out += struct.pack("<2h", model.theta_x_raw, model.theta_h_raw)
    Path(path).write_bytes(bytes(out))


def load_quant_model(path: str | Path) -> QuantModel:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not an EDRN file")
    version, n_layers, n_in, hidden, n_out = struct.unpack_from("<5I", blob, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported EDRN version {version}")
    total_bits, frac_bits = struct.unpack_from("<2B", blob, 24)
    pos = 26

    def record():
        nonlocal pos
        kind, frac, ndim = struct.unpack_from("<BbB", blob, pos)
        pos += 3
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        dtype = "<i1" if kind == _KIND_WEIGHT else "<i2"
        count = int(np.prod(shape))
        data = np.frombuffer(blob, dtype=dtype, count=count, offset=pos).reshape(shape).astype(np.int64)
        pos += count * np.dtype(dtype).itemsize
        return frac, data

    layers = []
    for _ in range(n_layers):
        wi = [record() for _ in range(3)]
        wh = [record() for _ in range(3)]
        _, b_i = record()
        _, b_h = record()
        layers.append(
            QuantLayer(
                np.concatenate([d for _, d in wi]),
                np.concatenate([d for _, d in wh]),
                np.array([f for f, _ in wi], dtype=np.int64),
                np.array([f for f, _ in wh], dtype=np.int64),
                b_i,
                b_h,
            )
        )
    f_fc, W_fc = record()
    _, b_fc = record()
    theta_x, theta_h = struct.unpack_from("<2h", blob, pos)
    pos += 4
    if pos != len(blob):
        raise ValueError(f"{path}: trailing bytes")
    model = QuantModel(
        NetArch(hidden, n_layers, n_in, n_out), layers, W_fc, f_fc, b_fc, theta_x, theta_h, QFormat(total_bits, frac_bits)
    )
    model.check_accumulator_bound()
    return model
