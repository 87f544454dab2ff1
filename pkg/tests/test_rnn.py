import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import fd_check_delta, fd_check_gru, random_net, scalar_gru

from prosthesis_rnn.config import StageSchedule, TrainConfig
from prosthesis_rnn.rnn.gru import (
    DeltaThresholds,
    StaleCacheError,
    deltagru_backward,
    deltagru_forward,
    gru_backward,
    gru_forward,
    input_gradient,
    sigmoid,
)
from prosthesis_rnn.rnn.params import NetArch, init_params, load_params, save_params
from prosthesis_rnn.rnn.train import Adam, clip_grad_norm, evaluate, l1_loss, train

ZERO = DeltaThresholds(0.0, 0.0)


def test_arch_counts():
    a = NetArch(128)
    assert a.n_weights() == 3 * 128 * (5 + 128) + 3 * 128 * (128 + 128) + 2 * 128 == 149_632
    assert a.n_params() == 149_632 + 2 * 6 * 128 + 2
    with pytest.raises(ValueError):
        NetArch(0)


def test_zero_net_stays_at_rest():
    p = init_params(NetArch(4), np.random.default_rng(0))
    for a in p.arrays():
        a[...] = 0.0
    p.b_fc[...] = (0.3, -0.7)
    y, hT, _ = gru_forward(p, np.random.default_rng(1).normal(size=(12, 5)))
    assert np.all(hT == 0.0)
    assert np.all(y == np.array([0.3, -0.7]))


def test_update_gate_saturated_holds_state():
    rng = np.random.default_rng(2)
    p = random_net(rng, 4, n_layers=1)
    M = 4
    p.layers[0].b_i[M : 2 * M] = 20.0
    p.layers[0].b_h[M : 2 * M] = 20.0
    h0 = rng.uniform(-0.9, 0.9, size=(1, M))
    _, hT, _ = gru_forward(p, rng.normal(size=(6, 5)) * 0.1, h0=h0.reshape(1, 1, M))
    assert np.allclose(hT[0, 0], h0[0], atol=1e-6)


def test_matches_scalar_oracle():
    rng = np.random.default_rng(3)
    p = random_net(rng, 4, input_dim=3)
    x = rng.normal(size=(5, 3))
    assert np.max(np.abs(gru_forward(p, x)[0] - scalar_gru(p, x))) <= 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_scalar_oracle_random(seed):
    rng = np.random.default_rng(seed)
    p = random_net(rng, int(rng.integers(1, 6)), input_dim=int(rng.integers(1, 5)))
    x = rng.normal(size=(int(rng.integers(1, 8)), p.arch.input_dim))
    assert np.max(np.abs(gru_forward(p, x)[0] - scalar_gru(p, x))) <= 1e-12


def test_sigmoid_stable():
    assert sigmoid(np.array([-1000.0, 0.0, 1000.0])).tolist() == [0.0, 0.5, 1.0]


def test_batch_and_single_layouts_agree():
    rng = np.random.default_rng(4)
    p = random_net(rng, 5)
    x = rng.normal(size=(3, 7, 5))
    yb = gru_forward(p, x)[0]
    for b in range(3):
        assert np.allclose(gru_forward(p, x[b])[0], yb[b], atol=1e-14)


def test_shape_errors():
    p = random_net(np.random.default_rng(0), 3)
    with pytest.raises(ValueError):
        gru_forward(p, np.zeros((4, 6)))
    with pytest.raises(ValueError):
        gru_forward(p, np.zeros(5))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_hidden_state_bounded(seed):
    rng = np.random.default_rng(seed)
    p = random_net(rng, 6, scale=3.0)
    _, _, cache = gru_forward(p, rng.normal(size=(40, 5)) * 10)
    # open interval mathematically; tanh rounds to exactly 1.0 in double at saturation
    assert np.all(np.abs(cache.top) <= 1.0)
    _, _, cache = gru_forward(random_net(rng, 6, scale=0.5), rng.normal(size=(40, 5)))
    assert np.all(np.abs(cache.top) < 1.0)


def test_zero_grad():
    rng = np.random.default_rng(5)
    p = random_net(rng, 4)
    x = rng.normal(size=(2, 6, 5))
    _, _, c = gru_forward(p, x)
    g, gh0 = gru_backward(c, np.zeros((2, 6, 2)))
    assert all(np.all(a == 0) for a in g.arrays()) and np.all(gh0 == 0)
    _, _, c = deltagru_forward(p, x, DeltaThresholds(0.1, 0.1))
    assert all(np.all(a == 0) for a in deltagru_backward(c, np.zeros((2, 6, 2))).arrays())


def test_fc_bias_grad_single_step():
    rng = np.random.default_rng(6)
    p = random_net(rng, 4)
    gy = np.array([[0.3, -1.2]])
    _, _, c = gru_forward(p, rng.normal(size=(1, 5)))
    g, _ = gru_backward(c, gy)
    assert np.array_equal(g.b_fc, gy[0])


@settings(max_examples=6, deadline=None)
@given(st.integers(0, 2**31))
def test_bptt_matches_fd(seed):
    rng = np.random.default_rng(seed)
    p = random_net(rng, int(rng.integers(1, 9)))
    T = int(rng.integers(1, 11))
    x, gy = rng.normal(size=(2, T, 5)), rng.normal(size=(2, T, 2))
    _, _, c = gru_forward(p, x)
    g, _ = gru_backward(c, gy)
    assert fd_check_gru(p, x, gy, g) < 1e-5


def test_h0_and_input_gradients_fd():
    rng = np.random.default_rng(7)
    p = random_net(rng, 3)
    x, gy = rng.normal(size=(2, 4, 5)), rng.normal(size=(2, 4, 2))
    h0 = rng.normal(size=(2, 2, 3)) * 0.5
    _, _, c = gru_forward(p, x, h0)
    _, gh0 = gru_backward(c, gy)
    gx = input_gradient(c, gy)
    f = lambda x_, h_: np.sum(gru_forward(p, x_, h_)[0] * gy)  # noqa: E731
    for idx in np.ndindex(h0.shape):
        e = np.zeros_like(h0)
        e[idx] = 1e-6
        assert gh0[idx] == pytest.approx((f(x, h0 + e) - f(x, h0 - e)) / 2e-6, rel=1e-5, abs=1e-8)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = 1e-6
        assert gx[idx] == pytest.approx((f(x + e, h0) - f(x - e, h0)) / 2e-6, rel=1e-5, abs=1e-8)


def test_stale_cache():
    rng = np.random.default_rng(8)
    p = random_net(rng, 3)
    x = rng.normal(size=(1, 3, 5))
    _, _, c = gru_forward(p, x)
    Adam(p, 1e-3).step(gru_backward(c, np.ones((1, 3, 2)))[0])
    with pytest.raises(StaleCacheError):
        gru_backward(c, np.ones((1, 3, 2)))
    _, _, c = gru_forward(p, x)
    with pytest.raises(StaleCacheError):
        deltagru_backward(c, np.ones((1, 3, 2)))
    with pytest.raises(ValueError):
        gru_backward(c, np.ones((1, 4, 2)))


# ---------------------------------------------------------------- DeltaGRU


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_delta_zero_threshold_equivalence(seed):
    rng = np.random.default_rng(seed)
    p = random_net(rng, int(rng.integers(1, 9)))
    x, gy = rng.normal(size=(3, 20, 5)), rng.normal(size=(3, 20, 2))
    y, _, c = gru_forward(p, x)
    yd, _, cd = deltagru_forward(p, x, ZERO)
    assert np.max(np.abs(y - yd)) <= 1e-12
    g, _ = gru_backward(c, gy)
    gd = deltagru_backward(cd, gy)
    assert max(np.max(np.abs(a - b)) for a, b in zip(g.arrays(), gd.arrays())) <= 1e-12


def test_accumulators_track_dense_preactivations():
    rng = np.random.default_rng(9)
    p = random_net(rng, 5)
    x = rng.normal(size=(15, 5))
    state = None
    h = [np.zeros(5), np.zeros(5)]
    for t in range(15):
        _, state, _ = deltagru_forward(p, x[t : t + 1], ZERO, state)
        v = x[t]
        for l, layer in enumerate(p.layers):
            s = state.layers[l]
            assert np.allclose(s.acc_i[0], layer.W_i @ v + layer.b_i, atol=1e-10)
            assert np.allclose(s.acc_h[0], layer.W_h @ h[l] + layer.b_h, atol=1e-10)
            h[l] = s.h[0]
            v = h[l]


def test_constant_input_sent_once():
    rng = np.random.default_rng(10)
    p = random_net(rng, 4)
    x = np.tile(rng.normal(size=5), (30, 1))
    _, state, c = deltagru_forward(p, x, DeltaThresholds(0.01, 0.5))
    m = c.layers[0].mask_x
    assert m[0].all() and not m[1:].any()
    assert state.layers[0].x_hat[0].tolist() == x[0].tolist()


def test_threshold_is_inclusive():
    p = random_net(np.random.default_rng(11), 2, input_dim=1, n_layers=1)
    x = np.array([[0.6], [0.4], [1.1]])
    _, st, c = deltagru_forward(p, x, DeltaThresholds(0.5, 10.0))
    assert c.layers[0].mask_x[:, 0, 0].tolist() == [True, False, True]
    # x_hat held at 0.6 through the skipped step, then updated to 1.1
    assert c.layers[0].inp[:, 0, 0].tolist() == [0.6, 0.6, 1.1]


def test_delta_state_carries_across_calls():
    rng = np.random.default_rng(12)
    p = random_net(rng, 4)
    x = rng.normal(size=(20, 5))
    th = DeltaThresholds(0.2, 0.1)
    y_all, s_all, _ = deltagru_forward(p, x, th)
    y1, s1, _ = deltagru_forward(p, x[:9], th)
    y2, s2, _ = deltagru_forward(p, x[9:], th, s1)
    # cumulative sums split at a different point, so equality is up to rounding
    assert np.max(np.abs(np.concatenate([y1, y2]) - y_all)) <= 1e-12
    assert s2.counts == s_all.counts


@settings(max_examples=4, deadline=None)
@given(st.integers(0, 2**31))
def test_masked_delta_fd(seed):
    rng = np.random.default_rng(seed)
    p = random_net(rng, int(rng.integers(2, 9)))
    T = int(rng.integers(2, 11))
    x, gy = rng.normal(size=(2, T, 5)), rng.normal(size=(2, T, 2))
    th = DeltaThresholds(0.3, 0.2)
    _, _, c = deltagru_forward(p, x, th)
    assert 0 < c.layers[0].mask_h.mean() < 1  # thresholds are active
    worst, checked, _ = fd_check_delta(p, x, gy, deltagru_backward(c, gy), th)
    assert checked > 0 and worst < 1e-4


def test_thresholds_validation():
    with pytest.raises(ValueError):
        DeltaThresholds(-1.0, 0.0)


# ---------------------------------------------------------------- loss, optimizer, training


def test_l1_loss():
    y = np.random.default_rng(0).normal(size=(2, 3, 2))
    assert l1_loss(y, y)[0] == 0.0
    assert l1_loss(np.array([[[1.0, 2.0]]]), np.zeros((1, 1, 2)))[0] == 1.5
    _, g = l1_loss(np.array([[[1.0, 2.0]]]), np.array([[[1.0, 0.0]]]))
    assert g.tolist() == [[[0.0, -0.5]]]
    with pytest.raises(ValueError):
        l1_loss(np.zeros((1, 2, 2)), np.zeros((1, 3, 2)))


@given(st.floats(0.01, 100), st.integers(0, 1000))
def test_l1_homogeneous(k, seed):
    rng = np.random.default_rng(seed)
    y, yh = rng.normal(size=(2, 3, 2)), rng.normal(size=(2, 3, 2))
    assert l1_loss(k * y, k * yh)[0] == pytest.approx(k * l1_loss(y, yh)[0], rel=1e-12)


def test_adam_first_step_is_lr_sized():
    p = random_net(np.random.default_rng(0), 2)
    before = [a.copy() for a in p.arrays()]
    g = p.zeros_like()
    for a in g.arrays():
        a[...] = 3.0
    Adam(p, 0.01).step(g)
    for a, b in zip(p.arrays(), before):
        assert np.allclose(b - a, 0.01, rtol=1e-6)
    assert p.version == 1


def test_clip_grad_norm():
    g = random_net(np.random.default_rng(0), 3)
    norm = clip_grad_norm(g, 1.0)
    assert norm > 1.0
    assert np.sqrt(sum(np.sum(a * a) for a in g.arrays())) == pytest.approx(1.0, rel=1e-9)
    assert clip_grad_norm(g, 5.0) == pytest.approx(1.0, rel=1e-9)


def _toy_data(seed, B):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(B, 12, 5)) * 0.3
    Y = np.stack([-50 * X[..., 0] - 2.5 * X[..., 2], -15 * X[..., 1]], axis=-1) / 10
    return X, Y


TINY = TrainConfig(hidden=4, pretrain=StageSchedule(4, 1e-2, 8), retrain=StageSchedule(2, 1e-2, 8))


def test_train_learns_and_is_deterministic():
    tr, va = _toy_data(0, 48), _toy_data(1, 16)
    r1 = train(tr, va, NetArch(4), TINY, seed=3)
    r2 = train(tr, va, NetArch(4), TINY, seed=3)
    assert [c["epoch"] for c in r1.curve] == list(range(1, 7))
    assert [c["stage"] for c in r1.curve] == ["pretrain"] * 4 + ["retrain"] * 2
    assert r1.curve[3]["val_loss"] < r1.curve[0]["val_loss"]
    assert all(np.array_equal(a, b) for a, b in zip(r1.delta.arrays(), r2.delta.arrays()))
    assert r1.curve == r2.curve
    # returned networks are the per-stage best on validation
    vals = [c["val_loss"] for c in r1.curve]
    assert r1.val_gru == min(vals[:4]) and r1.val_delta == min(vals[4:])
    assert evaluate(r1.gru, *va) == pytest.approx(r1.val_gru, rel=1e-12)
    th = DeltaThresholds(TINY.theta_x, TINY.theta_h)
    assert evaluate(r1.delta, *va, th) == pytest.approx(r1.val_delta, rel=1e-12)


def test_evaluate_chunking_invariant():
    p = random_net(np.random.default_rng(0), 3)
    X, Y = _toy_data(2, 10)
    assert evaluate(p, X, Y, chunk=3) == pytest.approx(evaluate(p, X, Y), rel=1e-13)


def test_params_roundtrip(tmp_path):
    p = random_net(np.random.default_rng(0), 7)
    save_params(p, tmp_path / "m.dgru")
    q = load_params(tmp_path / "m.dgru")
    assert q.arch == p.arch
    assert all(np.array_equal(a, b) for a, b in zip(p.arrays(), q.arrays()))
    blob = (tmp_path / "m.dgru").read_bytes()
    assert blob[:4] == b"DGRU"
    save_params(q, tmp_path / "n.dgru")
    assert (tmp_path / "n.dgru").read_bytes() == blob
    (tmp_path / "bad.dgru").write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(ValueError):
        load_params(tmp_path / "bad.dgru")
    (tmp_path / "short.dgru").write_bytes(blob[:-8])
    with pytest.raises(ValueError):
        load_params(tmp_path / "short.dgru")
