"""Network architecture, parameter container and the DGRU binary format."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"DGRU"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class NetArch:
    hidden: int
    n_layers: int = 2
    input_dim: int = 5
    output_dim: int = 2

    def __post_init__(self):
        if min(self.hidden, self.n_layers, self.input_dim, self.output_dim) < 1:
            raise ValueError(f"all dimensions must be positive: {self}")

    def layer_input_dim(self, layer: int) -> int:
        return self.input_dim if layer == 0 else self.hidden

    def n_weights(self) -> int:
        """Matrix entries only (what the MAC array touches per dense step)."""
        M = self.hidden
        gru = sum(3 * M * (self.layer_input_dim(l) + M) for l in range(self.n_layers))
        return gru + self.output_dim * M

    def n_params(self) -> int:
        return self.n_weights() + self.n_layers * 6 * self.hidden + self.output_dim


@dataclass
class GRULayer:
    """Gate rows are stacked in (r, z, n) order: W_i = [W_ir; W_iz; W_in]."""

    W_i: np.ndarray  # (3M, in)
    W_h: np.ndarray  # (3M, M)
    b_i: np.ndarray  # (3M,)
    b_h: np.ndarray  # (3M,)


@dataclass
class NetworkParams:
    arch: NetArch
    layers: list[GRULayer]
    W_fc: np.ndarray  # (Q, M)
    b_fc: np.ndarray  # (Q,)
    # bumped by every in-place update; caches remember it to detect staleness
    version: int = field(default=0, compare=False)

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        """All tensors in serialization order."""
        out = []
        for i, layer in enumerate(self.layers):
            out += [(f"l{i}.W_i", layer.W_i), (f"l{i}.W_h", layer.W_h), (f"l{i}.b_i", layer.b_i), (f"l{i}.b_h", layer.b_h)]
        out += [("W_fc", self.W_fc), ("b_fc", self.b_fc)]
        return out

    def arrays(self) -> list[np.ndarray]:
        return [a for _, a in self.tensors()]

    def copy(self) -> NetworkParams:
        layers = [GRULayer(l.W_i.copy(), l.W_h.copy(), l.b_i.copy(), l.b_h.copy()) for l in self.layers]
        return NetworkParams(self.arch, layers, self.W_fc.copy(), self.b_fc.copy())

    def zeros_like(self) -> NetworkParams:
        z = self.copy()
        for a in z.arrays():
            a[...] = 0.0
        return z

    def validate(self) -> None:
        a = self.arch
        M = a.hidden
        if len(self.layers) != a.n_layers:
            raise ValueError("layer count does not match arch")
        for i, layer in enumerate(self.layers):
            n_in = a.layer_input_dim(i)
            shapes = (layer.W_i.shape, layer.W_h.shape, layer.b_i.shape, layer.b_h.shape)
            if shapes != ((3 * M, n_in), (3 * M, M), (3 * M,), (3 * M,)):
                raise ValueError(f"layer {i} shapes {shapes} inconsistent with {a}")
        if self.W_fc.shape != (a.output_dim, M) or self.b_fc.shape != (a.output_dim,):
            raise ValueError("FC shapes inconsistent with arch")
        if not all(np.all(np.isfinite(x)) for x in self.arrays()):
            raise ValueError("non-finite parameter")


def init_params(arch: NetArch, rng: np.random.Generator) -> NetworkParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per tensor; biases use the hidden size."""
    M = arch.hidden
    k = 1.0 / np.sqrt(M)
    layers = []
    for l in range(arch.n_layers):
        n_in = arch.layer_input_dim(l)
        ki = 1.0 / np.sqrt(n_in)
        layers.append(
            GRULayer(
                rng.uniform(-ki, ki, (3 * M, n_in)),
                rng.uniform(-k, k, (3 * M, M)),
                rng.uniform(-k, k, 3 * M),
                rng.uniform(-k, k, 3 * M),
            )
        )
    return NetworkParams(arch, layers, rng.uniform(-k, k, (arch.output_dim, M)), rng.uniform(-k, k, arch.output_dim))


def save_params(params: NetworkParams, path: str | Path) -> None:
    """Little-endian: magic, u32 version, u32 (n_layers, input_dim, hidden, output_dim),
    then every tensor of :meth:`NetworkParams.tensors` as float64 in C order."""
    a = params.arch
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<5I", FORMAT_VERSION, a.n_layers, a.input_dim, a.hidden, a.output_dim))
        for _, t in params.tensors():
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def load_params(path: str | Path) -> NetworkParams:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a DGRU file")
    version, n_layers, n_in, hidden, n_out = struct.unpack_from("<5I", blob, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported DGRU version {version}")
    arch = NetArch(hidden, n_layers, n_in, n_out)
    template = init_params(arch, np.random.default_rng(0))
    offset = 4 + 20
    for _, t in template.tensors():
        n = t.size * 8
        t[...] = np.frombuffer(blob, dtype="<f8", count=t.size, offset=offset).reshape(t.shape)
        offset += n
    if offset != len(blob):
        raise ValueError(f"{path}: trailing bytes after tensors")
    template.validate()
    return template
