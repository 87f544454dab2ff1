"""Independent reference implementations shared by the unit and acceptance tests."""

import math

import numpy as np

from prosthesis_rnn.rnn.gru import DeltaThresholds, deltagru_forward, gru_forward
from prosthesis_rnn.rnn.params import NetArch, init_params


def scalar_gru(params, xs):
    """Step-by-step GRU with plain Python loops over every element; no matrix library."""
    M = params.arch.hidden
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))  # noqa: E731
    hs = [[0.0] * M for _ in params.layers]
    out = []
    for x in xs:
        v = [float(e) for e in x]
        for l, layer in enumerate(params.layers):
            h = hs[l]
            gi = [sum(layer.W_i[row][k] * v[k] for k in range(len(v))) + layer.b_i[row] for row in range(3 * M)]
            gh = [sum(layer.W_h[row][k] * h[k] for k in range(M)) + layer.b_h[row] for row in range(3 * M)]
            new = []
            for j in range(M):
                r = sig(gi[j] + gh[j])
                z = sig(gi[M + j] + gh[M + j])
                n = math.tanh(gi[2 * M + j] + r * gh[2 * M + j])
                new.append((1 - z) * n + z * h[j])
            hs[l] = new
            v = new
        out.append([sum(params.W_fc[q][j] * v[j] for j in range(M)) + params.b_fc[q] for q in range(params.arch.output_dim)])
    return np.array(out)


def random_net(rng, hidden, input_dim=5, output_dim=2, n_layers=2, scale=0.7):
    p = init_params(NetArch(hidden, n_layers, input_dim, output_dim), rng)
    for a in p.arrays():
        a[...] = rng.normal(size=a.shape) * scale
    return p


def rel_err(a, b, floor=1e-3):
    """|a - b| / max(|a|, |b|, floor); the floor keeps vanishing gradients from
    turning finite-difference roundoff (~1e-10) into a large relative number."""
    return abs(a - b) / max(abs(a), abs(b), floor)


def _objective(y, gy):
    return float(np.sum(y * gy))


def fd_check_gru(params, x, gy, grads, h=1e-6):
    """Worst relative error over every parameter entry, central differences."""
    worst = 0.0
    for a, g in zip(params.arrays(), grads.arrays()):
        for idx in np.ndindex(a.shape):
            o = a[idx]
            a[idx] = o + h
            lp = _objective(gru_forward(params, x)[0], gy)
            a[idx] = o - h
            lm = _objective(gru_forward(params, x)[0], gy)
            a[idx] = o
            worst = max(worst, rel_err((lp - lm) / (2 * h), g[idx]))
    return worst


def _masks(cache):
    return [l.mask_x for l in cache.layers] + [l.mask_h for l in cache.layers]


def fd_check_delta(params, x, gy, grads, thresholds: DeltaThresholds, h=1e-7):
    """Masked finite differences: perturbations that flip any transmit decision are
    skipped. Returns (worst relative error, checked count, skipped count)."""
    _, _, ref = deltagru_forward(params, x, thresholds)
    ref_masks = _masks(ref)
    worst, checked, skipped = 0.0, 0, 0
    for a, g in zip(params.arrays(), grads.arrays()):
        for idx in np.ndindex(a.shape):
            o = a[idx]
            vals, same = [], True
            for s in (1.0, -1.0):
                a[idx] = o + s * h
                y, _, c = deltagru_forward(params, x, thresholds)
                vals.append(_objective(y, gy))
                same &= all(np.array_equal(m0, m1) for m0, m1 in zip(ref_masks, _masks(c)))
            a[idx] = o
            if not same:
                skipped += 1
                continue
            checked += 1
            worst = max(worst, rel_err((vals[0] - vals[1]) / (2 * h), g[idx]))
    return worst, checked, skipped
