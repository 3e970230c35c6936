import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from microdialect.nncore import (Adam, AdamState, AttentionPool, BiGRU, Dense, EmptySequence, GRU,
                                 IndivisibleDim, MultiHeadAttention, NonFiniteLoss, OddUnits,
                                 Parameter, RngStreams, ShapeMismatch, Tensor, adam_step,
                                 grad_check, no_grad, numeric_mode, ops)

finite = st.floats(-5, 5, allow_nan=False, width=64)


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def scalar_gru_step(x, h, g: GRU):
    """Scalar-loop oracle of one Cho GRU step."""
    H = g.hidden
    W, Uzr, Uc, b = g.w_x.data, g.u_zr.data, g.u_c.data, g.b.data
    D = len(x)
    z, r, out = [0.0] * H, [0.0] * H, [0.0] * H
    for j in range(H):
        sz = b[j] + sum(x[i] * W[i, j] for i in range(D)) + sum(h[k] * Uzr[k, j] for k in range(H))
        sr = b[H + j] + sum(x[i] * W[i, H + j] for i in range(D)) + sum(h[k] * Uzr[k, H + j] for k in range(H))
        z[j], r[j] = _sig(sz), _sig(sr)
    for j in range(H):
        sc = b[2 * H + j] + sum(x[i] * W[i, 2 * H + j] for i in range(D))
        sc += sum(r[k] * h[k] * Uc[k, j] for k in range(H))
        c = math.tanh(sc)
        out[j] = z[j] * h[j] + (1 - z[j]) * c
    return np.array(out)


# primitive ops

def test_softmax_symmetric_pair():
    np.testing.assert_allclose(ops.softmax(Tensor(np.zeros((1, 2)))).data, [[0.5, 0.5]])


def test_cross_entropy_uniform_is_log_v():
    loss = ops.cross_entropy(Tensor(np.zeros((4, 21))), np.array([0, 5, 9, 20]))
    assert float(loss.data) == pytest.approx(math.log(21), abs=1e-12)
    assert math.log(21) == pytest.approx(3.0445, abs=1e-4)


def test_dropout_rate_zero_identity(rng):
    x = Tensor(rng.normal(size=(3, 4)))
    for training in (True, False):
        np.testing.assert_array_equal(ops.dropout(x, 0.0, rng, training).data, x.data)


def test_dropout_rejects_rate_one(rng):
    with pytest.raises(ValueError):
        ops.dropout(Tensor(np.ones(3)), 1.0, rng, True)


def test_dropout_eval_mode_identity(rng):
    x = Tensor(rng.normal(size=(3, 4)))
    np.testing.assert_array_equal(ops.dropout(x, 0.7, None, False).data, x.data)


def test_inverted_dropout_expectation():
    rng = np.random.default_rng(0)
    out = ops.dropout(Tensor(np.ones(200_000)), 0.5, rng, True).data
    assert set(np.unique(out)) <= {0.0, 2.0}
    assert out.mean() == pytest.approx(1.0, abs=0.01)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 7)), elements=finite))
def test_softmax_rows_on_simplex(x):
    p = ops.softmax(Tensor(x)).data
    assert (p >= 0).all()
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (3, 4), elements=finite))
def test_backward_is_linear_in_losses(a, b):
    """grad(L1 + L2) = grad(L1) + grad(L2) for a dense layer."""
    layer = Dense(4, 3, np.random.default_rng(0), sigma=0.5)

    def grads(loss_fn):
        layer.zero_grad()
        loss_fn().backward()
        return [p.grad.copy() for p in layer.parameters()]

    l1 = lambda: ops.sum(ops.tanh(layer(Tensor(a))))  # noqa: E731
    l2 = lambda: ops.mean(ops.square(layer(Tensor(b))))  # noqa: E731
    g1, g2 = grads(l1), grads(l2)
    g12 = grads(lambda: l1() + l2())
    for x, y, z in zip(g1, g2, g12):
        np.testing.assert_allclose(x + y, z, atol=1e-10)


def test_no_grad_builds_no_tape():
    p = Parameter(np.ones(3))
    with no_grad():
        y = ops.sum(p * p)
    assert not y.requires_grad


def test_numeric_modes_select_dtype():
    with numeric_mode("run"):
        assert Parameter.zeros((2,)).data.dtype == np.float32
    assert Parameter.zeros((2,)).data.dtype == np.float64


def test_parameter_init_statistics():
    p = Parameter.normal((400, 300), np.random.default_rng(5))
    x = p.data.ravel()
    se_mean = 0.05 / math.sqrt(x.size)
    assert abs(x.mean()) < 3 * se_mean
    se_std = 0.05 / math.sqrt(2 * x.size)
    assert abs(x.std() - 0.05) < 3 * se_std


# GRU

def _zero_gru(D=3, H=4):
    g = GRU(D, H, np.random.default_rng(0))
    for p in g.parameters():
        p.data = np.zeros_like(p.data)
    return g


def test_gru_zero_params_halves_state():
    g = _zero_gru()
    h = np.array([[0.2, -0.4, 0.6, 1.0]])
    out = g.step(Tensor(np.ones((1, 3))), Tensor(h)).data
    np.testing.assert_allclose(out, 0.5 * h, atol=1e-15)


def test_gru_zero_params_zero_state():
    g = _zero_gru()
    out = g.step(Tensor(np.ones((1, 3))), Tensor(np.zeros((1, 4)))).data
    np.testing.assert_array_equal(out, 0.0)


def test_gru_matches_scalar_oracle():
    rng = np.random.default_rng(7)
    g = GRU(3, 4, rng, sigma=0.5)
    g.b.data = rng.normal(size=12) * 0.3
    x, h = rng.normal(size=3), np.tanh(rng.normal(size=4))
    got = g.step(Tensor(x[None]), Tensor(h[None])).data[0]
    np.testing.assert_allclose(got, scalar_gru_step(x, h, g), atol=1e-12)


def test_gru_step_shape_mismatch():
    g = GRU(3, 4, np.random.default_rng(0))
    with pytest.raises(ShapeMismatch):
        g.step(Tensor(np.ones((1, 5))), Tensor(np.zeros((1, 4))))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 3, elements=finite),
       arrays(np.float64, 4, elements=st.floats(-1, 1, width=64)), st.integers(0, 2**31))
def test_gru_state_bounded(x, h, seed):
    g = GRU(3, 4, np.random.default_rng(seed), sigma=2.0)
    out = g.step(Tensor(x[None]), Tensor(h[None])).data
    assert (np.abs(out) <= 1.0 + 1e-12).all()


def test_bigru_units_split_and_odd_rejected(rng):
    layer = BiGRU(5, 1000, rng)
    assert layer.fwd.hidden == layer.bwd.hidden == 500
    with pytest.raises(OddUnits):
        BiGRU(5, 7, rng)


def test_bigru_direction_dependence(rng):
    layer = BiGRU(3, 8, rng, sigma=0.5)
    x = rng.normal(size=(1, 5, 3))
    base = layer(Tensor(x)).data
    x2 = x.copy()
    x2[0, 4] += 1.0  # change the last step
    out = layer(Tensor(x2)).data
    np.testing.assert_array_equal(out[0, :4, :4], base[0, :4, :4])  # forward half sees prefixes
    x3 = x.copy()
    x3[0, 0] += 1.0  # change the first step
    out = layer(Tensor(x3)).data
    np.testing.assert_array_equal(out[0, 1:, 4:], base[0, 1:, 4:])  # backward half sees suffixes


def test_bigru_length_one_runs_both_directions(rng):
    layer = BiGRU(3, 6, rng, sigma=0.5)
    x = rng.normal(size=(1, 1, 3))
    out = layer(Tensor(x)).data
    h0 = Tensor(np.zeros((1, 3)))
    np.testing.assert_allclose(out[0, 0, :3], layer.fwd.step(Tensor(x[:, 0]), h0).data[0])
    np.testing.assert_allclose(out[0, 0, 3:], layer.bwd.step(Tensor(x[:, 0]), h0).data[0])


def test_bigru_reversal_swaps_halves(rng):
    layer = BiGRU(3, 6, rng, sigma=0.5)
    swapped = BiGRU(3, 6, rng)
    swapped.fwd.load_state_dict(layer.bwd.state_dict())
    swapped.bwd.load_state_dict(layer.fwd.state_dict())
    x = rng.normal(size=(2, 5, 3))
    a = layer(Tensor(x)).data
    b = swapped(Tensor(x[:, ::-1].copy())).data[:, ::-1]
    np.testing.assert_allclose(a[..., :3], b[..., 3:], atol=1e-14)
    np.testing.assert_allclose(a[..., 3:], b[..., :3], atol=1e-14)


# attention

def test_attention_identical_states_uniform(rng):
    pool = AttentionPool(4, rng, sigma=1.0)
    h = np.tile(rng.normal(size=4), (1, 5, 1))
    ctx, w = pool(Tensor(h))
    np.testing.assert_allclose(w.data, 0.2)
    np.testing.assert_allclose(ctx.data[0], h[0, 0])


def test_attention_single_step(rng):
    pool = AttentionPool(4, rng)
    h = rng.normal(size=(1, 1, 4))
    ctx, w = pool(Tensor(h))
    np.testing.assert_allclose(w.data, [[1.0]])
    np.testing.assert_allclose(ctx.data[0], h[0, 0])


def test_attention_matches_formula(rng):
    pool = AttentionPool(4, rng, sigma=1.0)
    h = rng.normal(size=(1, 3, 4))
    q = pool.query.data[:, 0]
    scores = [sum(h[0, t, d] * q[d] for d in range(4)) for t in range(3)]
    m = max(scores)
    e = [math.exp(s - m) for s in scores]
    w = [v / sum(e) for v in e]
    ctx = [sum(w[t] * h[0, t, d] for t in range(3)) for d in range(4)]
    got_ctx, got_w = pool(Tensor(h))
    np.testing.assert_allclose(got_w.data[0], w, atol=1e-12)
    np.testing.assert_allclose(got_ctx.data[0], ctx, atol=1e-12)


def test_attention_empty_sequence(rng):
    with pytest.raises(EmptySequence):
        AttentionPool(4, rng)(Tensor(np.zeros((1, 0, 4))))


def test_mha_indivisible(rng):
    with pytest.raises(IndivisibleDim):
        MultiHeadAttention(6, 4, rng)


def test_mha_single_kv_returns_projected_value(rng):
    mha = MultiHeadAttention(4, 1, rng, sigma=0.5)
    kv = Tensor(rng.normal(size=(1, 1, 4)))
    q = Tensor(rng.normal(size=(1, 3, 4)))
    out, _ = mha(q, kv, kv)
    expected = mha.o(mha.v(kv)).data[0, 0]
    for t in range(3):
        np.testing.assert_allclose(out.data[0, t], expected, atol=1e-12)


def test_mha_identical_keys_uniform(rng):
    mha = MultiHeadAttention(4, 2, rng, sigma=0.5)
    k = Tensor(np.tile(rng.normal(size=4), (1, 5, 1)))
    _, w = mha(Tensor(rng.normal(size=(1, 2, 4))), k, k)
    np.testing.assert_allclose(w.data, 0.2, atol=1e-12)


def test_mha_matches_per_head_oracle(rng):
    mha = MultiHeadAttention(4, 2, rng, sigma=0.5)
    x = rng.normal(size=(1, 3, 4))
    out, _ = mha(Tensor(x), Tensor(x), Tensor(x))
    proj = lambda d, a: a @ d.weight.data + d.bias.data  # noqa: E731
    Q, K, V = proj(mha.q, x[0]), proj(mha.k, x[0]), proj(mha.v, x[0])
    heads = []
    for h in range(2):
        sl = slice(2 * h, 2 * h + 2)
        rows = []
        for i in range(3):
            s = np.array([Q[i, sl] @ K[j, sl] / math.sqrt(2) for j in range(3)])
            w = np.exp(s - s.max())
            w /= w.sum()
            rows.append(sum(w[j] * V[j, sl] for j in range(3)))
        heads.append(np.array(rows))
    expected = proj(mha.o, np.concatenate(heads, axis=1))
    np.testing.assert_allclose(out.data[0], expected, atol=1e-12)


# Adam

def test_adam_zero_grad_no_change():
    p = Parameter(np.array([1.0, -2.0]))
    before = p.data.copy()
    Adam([p]).step([np.zeros(2)])
    np.testing.assert_array_equal(p.data, before)


def test_adam_first_step_sign():
    p = Parameter(np.array([0.0, 0.0]))
    state = AdamState(lr=1e-3, m=[np.zeros(2)], v=[np.zeros(2)])
    adam_step([p], [np.array([3.0, -0.2])], state)
    np.testing.assert_allclose(p.data, [-1e-3, 1e-3], rtol=1e-6)
    assert state.t == 1


def test_adam_shape_mismatch():
    p = Parameter(np.zeros(2))
    with pytest.raises(ShapeMismatch):
        Adam([p]).step([np.zeros(3)])


def test_adam_deterministic_trajectories():
    def run():
        rng = np.random.default_rng(3)
        layer = Dense(3, 2, rng)
        opt = Adam(layer.parameters(), lr=0.01)
        x = Tensor(rng.normal(size=(5, 3)))
        for _ in range(5):
            opt.zero_grad()
            ops.cross_entropy(layer(x), np.array([0, 1, 0, 1, 1])).backward()
            opt.step()
        return [p.data.copy() for p in layer.parameters()]

    for a, b in zip(run(), run()):
        np.testing.assert_array_equal(a, b)


# gradient checks

def test_grad_check_linear_softmax():
    rng = np.random.default_rng(0)
    layer = Dense(4, 3, rng, sigma=0.5)
    x = Tensor(rng.normal(size=(6, 4)))
    y = np.array([0, 1, 2, 0, 1, 2])
    err = grad_check(layer.parameters(), lambda: ops.cross_entropy(layer(x), y))
    assert err < 1e-7


def test_grad_check_ops_composite():
    rng = np.random.default_rng(1)
    w = Parameter(rng.normal(size=(2, 3, 4)))
    g = Parameter(rng.normal(size=4) + 1.0)
    b = Parameter(rng.normal(size=4))

    def loss():
        h = ops.layer_norm(ops.relu(w) + ops.sigmoid(w), g, b)
        s = ops.log_softmax(ops.reshape(h, (6, 4)), axis=-1)
        z = ops.concat([ops.transpose(h, (0, 2, 1))[:, :2], ops.stack([h[:, 0], h[:, 1]], axis=1)], 2)
        return ops.mean(s) + ops.sum(ops.square(z)) * 0.01 + ops.mse(h, np.ones((2, 3, 4)))

    assert grad_check([w, g, b], loss) < 1e-6


def test_grad_check_needs_float64():
    with numeric_mode("run"):
        p = Parameter.zeros((2,))
    with pytest.raises(TypeError):
        grad_check([p], lambda: ops.sum(p))


def test_grad_check_nonfinite():
    p = Parameter(np.array([0.0]))
    with pytest.raises(NonFiniteLoss), np.errstate(invalid="ignore"):
        grad_check([p], lambda: ops.sum(p * np.inf))


def test_rng_streams_named_and_reproducible():
    a = RngStreams(5).split("x").stream("y").random(4)
    b = RngStreams(5).split("x").stream("y").random(4)
    c = RngStreams(5).split("x").stream("z").random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
