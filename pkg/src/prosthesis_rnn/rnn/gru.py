"""Batched GRU and DeltaGRU forward passes with exact BPTT.

Gate equations (reset gate applied after the recurrent product):

    r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
    z  = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
    n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
    h' = (1 - z) * n + z * h

The DeltaGRU replaces ``W x + b`` and ``W h + b`` by accumulators that start at
the biases and receive ``W @ delta`` where delta holds only the elements whose
change since their last transmission reached the threshold. In closed form the
accumulators equal ``b + W x_hat`` and ``b + W h_hat``, which is what the
backward pass differentiates (transmit masks held constant).

Arrays are batch-first at the API, ``(B, T, features)``; a 2-D ``(T, features)``
input is treated as a single sequence. Internally everything is time-major.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import NetworkParams


class StaleCacheError(RuntimeError):
    pass


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True)
class DeltaThresholds:
    theta_x: float = 0.0
    theta_h: float = 0.0

    def __post_init__(self):
        if self.theta_x < 0 or self.theta_h < 0:
            raise ValueError("delta thresholds must be >= 0")


@dataclass
class LayerDeltaState:
    x_hat: np.ndarray  # (B, in)
    h_hat: np.ndarray  # (B, M)
    h: np.ndarray  # (B, M)
    acc_i: np.ndarray  # (B, 3M)  W_i x_hat + b_i
    acc_h: np.ndarray  # (B, 3M)  W_h h_hat + b_h


@dataclass
class DeltaState:
    layers: list[LayerDeltaState]
    # transmitted / total delta elements, summed over layers and steps
    counts: dict = field(default_factory=lambda: {"tx_x": 0, "n_x": 0, "tx_h": 0, "n_h": 0})


def initial_delta_state(params: NetworkParams, batch: int = 1) -> DeltaState:
    a = params.arch
    layers = []
    for l, layer in enumerate(params.layers):
        n_in = a.layer_input_dim(l)
        layers.append(
            LayerDeltaState(
                np.zeros((batch, n_in)),
                np.zeros((batch, a.hidden)),
                np.zeros((batch, a.hidden)),
                np.tile(layer.b_i, (batch, 1)),
                np.tile(layer.b_h, (batch, 1)),
            )
        )
    return DeltaState(layers)


@dataclass
class _LayerCache:
    inp: np.ndarray  # (T, B, in) vectors fed to W_i (x, or x_hat for delta)
    rec: np.ndarray  # (T, B, M) vectors fed to W_h (h_{t-1}, or h_hat_t)
    h_prev: np.ndarray  # (T, B, M)
    r: np.ndarray
    z: np.ndarray
    n: np.ndarray
    hn: np.ndarray  # recurrent n-gate pre-activation (inside the reset product)
    mask_x: np.ndarray | None = None
    mask_h: np.ndarray | None = None


@dataclass
class ForwardCache:
    params: NetworkParams
    version: int
    layers: list[_LayerCache]
    top: np.ndarray  # (T, B, M) top-layer hidden states
    batch_first: bool
    delta: bool


def _to_time_major(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        return x[:, None, :], False
    if x.ndim == 3:
        return x.transpose(1, 0, 2), True
    raise ValueError(f"expected (T, N) or (B, T, N) input, got shape {x.shape}")


def _from_time_major(y, batch_first):
    return y.transpose(1, 0, 2) if batch_first else y[:, 0, :]


def _gates(gi, gh, h, M):
    r = sigmoid(gi[:, :M] + gh[:, :M])
    z = sigmoid(gi[:, M : 2 * M] + gh[:, M : 2 * M])
    hn = gh[:, 2 * M :]
    n = np.tanh(gi[:, 2 * M :] + r * hn)
    return r, z, n, hn, (1.0 - z) * n + z * h


def _check_input(params, X):
    if X.shape[2] != params.arch.input_dim:
        raise ValueError(f"input feature dim {X.shape[2]} != arch input_dim {params.arch.input_dim}")


def gru_forward(params: NetworkParams, x, h0=None):
    """Dense GRU. Returns (y, h_T, cache); ``h0``/``h_T`` have shape (layers, B, M)."""
    X, batch_first = _to_time_major(x)
    _check_input(params, X)
    T, B, _ = X.shape
    M = params.arch.hidden
    if h0 is None:
        h0 = np.zeros((params.arch.n_layers, B, M))
    h0 = np.asarray(h0, dtype=float).reshape(params.arch.n_layers, B, M)
    caches, h_last = [], []
    inp = X
    for l, layer in enumerate(params.layers):
        GI = inp @ layer.W_i.T + layer.b_i
        h = h0[l]
        H = np.empty((T, B, M))
        Hp = np.empty((T, B, M))
        R, Z, N, HN = (np.empty((T, B, M)) for _ in range(4))
        for t in range(T):
            gh = h @ layer.W_h.T + layer.b_h
            Hp[t] = h
            R[t], Z[t], N[t], HN[t], h = _gates(GI[t], gh, h, M)
            H[t] = h
        caches.append(_LayerCache(inp, Hp, Hp, R, Z, N, HN))
        h_last.append(h)
        inp = H
    y = inp @ params.W_fc.T + params.b_fc
    cache = ForwardCache(params, params.version, caches, inp, batch_first, delta=False)
    return _from_time_major(y, batch_first), np.stack(h_last), cache


def deltagru_forward(params: NetworkParams, x, thresholds: DeltaThresholds, state: DeltaState | None = None):
    """DeltaGRU with persistent accumulators. Returns (y, final state, cache).

    Transmission is inclusive: an element is sent when ``|v - v_hat| >= theta``.
    Layer inputs use ``theta_x`` (including layer 2, whose input is layer 1's h);
    recurrent states use ``theta_h``.
    """
    X, batch_first = _to_time_major(x)
    _check_input(params, X)
    T, B, _ = X.shape
    M = params.arch.hidden
    if state is None:
        state = initial_delta_state(params, B)
    th_x, th_h = thresholds.theta_x, thresholds.theta_h
    caches, new_layers = [], []
    counts = dict(state.counts)
    inp = X
    for l, layer in enumerate(params.layers):
        st = state.layers[l]
        # input side does not depend on the recurrence: resolve all deltas first
        x_hat = st.x_hat.copy()
        Xhat = np.empty_like(inp)
        D = np.empty_like(inp)
        MX = np.empty(inp.shape, dtype=bool)
        for t in range(T):
            d = inp[t] - x_hat
            m = np.abs(d) >= th_x
            D[t] = np.where(m, d, 0.0)
            x_hat = np.where(m, inp[t], x_hat)
            Xhat[t] = x_hat
            MX[t] = m
        ACC_I = st.acc_i + np.cumsum(D @ layer.W_i.T, axis=0)

        h, h_hat, acc_h = st.h, st.h_hat.copy(), st.acc_h.copy()
        H = np.empty((T, B, M))
        Hp = np.empty((T, B, M))
        Hhat = np.empty((T, B, M))
        MH = np.empty((T, B, M), dtype=bool)
        R, Z, N, HN = (np.empty((T, B, M)) for _ in range(4))
        for t in range(T):
            d = h - h_hat
            m = np.abs(d) >= th_h
            acc_h = acc_h + np.where(m, d, 0.0) @ layer.W_h.T
            h_hat = np.where(m, h, h_hat)
            Hp[t], Hhat[t], MH[t] = h, h_hat, m
            R[t], Z[t], N[t], HN[t], h = _gates(ACC_I[t], acc_h, h, M)
            H[t] = h
        counts["tx_x"] += int(MX.sum())
        counts["n_x"] += MX.size
        counts["tx_h"] += int(MH.sum())
        counts["n_h"] += MH.size
        caches.append(_LayerCache(Xhat, Hhat, Hp, R, Z, N, HN, MX, MH))
        new_layers.append(LayerDeltaState(x_hat, h_hat, h, ACC_I[-1].copy(), acc_h))
        inp = H
    y = inp @ params.W_fc.T + params.b_fc
    cache = ForwardCache(params, params.version, caches, inp, batch_first, delta=True)
    return _from_time_major(y, batch_first), DeltaState(new_layers, counts), cache


def _backward(cache: ForwardCache, grad_y):
    params = cache.params
    if params.version != cache.version:
        raise StaleCacheError("parameters changed since the forward pass that produced this cache")
    G, batch_first = _to_time_major(grad_y)
    if batch_first != cache.batch_first or G.shape[:2] != cache.top.shape[:2] or G.shape[2] != params.arch.output_dim:
        raise ValueError(f"grad_y shape {np.shape(grad_y)} does not match the cached forward pass")
    M = params.arch.hidden
    grads = params.zeros_like()
    T, B, _ = G.shape
    flat = lambda a: a.reshape(T * B, -1)  # noqa: E731

    grads.W_fc[...] = flat(G).T @ flat(cache.top)
    grads.b_fc[...] = flat(G).sum(0)
    dH = G @ params.W_fc  # gradient reaching the top layer's outputs
    grad_h0 = []
    for l in reversed(range(len(params.layers))):
        layer, c, g = params.layers[l], cache.layers[l], grads.layers[l]
        dGI = np.empty((T, B, 3 * M))
        dGH = np.empty((T, B, 3 * M))
        dh_carry = np.zeros((B, M))
        dhat_carry = np.zeros((B, M))
        for t in reversed(range(T)):
            r, z, n, hn = c.r[t], c.z[t], c.n[t], c.hn[t]
            dh = dH[t] + dh_carry
            dn = dh * (1.0 - z)
            dz = dh * (c.h_prev[t] - n)
            dan = dn * (1.0 - n * n)
            dr = dan * hn
            dGI[t, :, :M] = dGH[t, :, :M] = dr * r * (1.0 - r)
            dGI[t, :, M : 2 * M] = dGH[t, :, M : 2 * M] = dz * z * (1.0 - z)
            dGI[t, :, 2 * M :] = dan
            dGH[t, :, 2 * M :] = dan * r
            drec = dGH[t] @ layer.W_h + dhat_carry
            if c.mask_h is None:
                dh_carry = dh * z + drec
            else:
                m = c.mask_h[t]
                dh_carry = dh * z + np.where(m, drec, 0.0)
                dhat_carry = np.where(m, 0.0, drec)
        grad_h0.append(dh_carry)
        g.W_h[...] = flat(dGH).T @ flat(c.rec)
        g.b_h[...] = flat(dGH).sum(0)
        g.W_i[...] = flat(dGI).T @ flat(c.inp)
        g.b_i[...] = flat(dGI).sum(0)
        dIn = dGI @ layer.W_i
        if c.mask_x is not None:
            carry = np.zeros((B, dIn.shape[2]))
            for t in reversed(range(T)):
                tot = dIn[t] + carry
                m = c.mask_x[t]
                dIn[t] = np.where(m, tot, 0.0)
                carry = np.where(m, 0.0, tot)
        dH = dIn
    return grads, np.stack(grad_h0[::-1]), dH


def gru_backward(cache: ForwardCache, grad_y):
    """Exact reverse-mode gradients. Returns (param grads, grad_h0)."""
    if cache.delta:
        raise StaleCacheError("cache comes from deltagru_forward; use deltagru_backward")
    grads, grad_h0, _ = _backward(cache, grad_y)
    return grads, grad_h0


def deltagru_backward(cache: ForwardCache, grad_y):
    """Straight-through gradients: transmit masks are treated as constants."""
    if not cache.delta:
        raise StaleCacheError("cache comes from gru_forward; use gru_backward")
    grads, _, _ = _backward(cache, grad_y)
    return grads


def input_gradient(cache: ForwardCache, grad_y):
    """Gradient with respect to the network input, batch layout matching ``grad_y``."""
    _, _, dX = _backward(cache, grad_y)
    return _from_time_major(dX, cache.batch_first)
