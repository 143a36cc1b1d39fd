import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nmtfusion import numerics as N
from nmtfusion.numerics import kernels
from nmtfusion.numerics.layers import Embedding, Linear, LSTMCell, attend, dot_attention, lstm_step

finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)


def param(rng, *shape):
    return N.Tensor(rng.normal(size=shape), requires_grad=True)


def probe(rng, shape):
    return rng.normal(size=shape)


# autodiff --------------------------------------------------------------------


def test_square_gradient():
    x = N.Tensor(np.array(3.0), requires_grad=True)
    (x * x).backward()
    assert x.grad == pytest.approx(6.0)


def test_independent_parameter_gets_zero_gradient():
    rng = np.random.default_rng(0)
    a, b = param(rng, 3), param(rng, 3)
    loss = N.tsum(a * a)
    loss.backward()
    assert b.grad is None or np.all(b.grad == 0)


def test_non_scalar_backward_rejected():
    x = N.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_fan_out_accumulates():
    x = N.Tensor(np.array([1.5, -2.0]), requires_grad=True)
    y = x * 3.0
    loss = N.tsum(y * y) + N.tsum(y)
    loss.backward()
    np.testing.assert_allclose(x.grad, 18.0 * x.data + 3.0)


def test_nan_aborts_with_op_name():
    x = N.Tensor(np.array([-1.0]), requires_grad=True)
    with pytest.raises(N.NonFiniteError, match="log"):
        N.log(x)


def test_no_grad_builds_no_graph():
    x = N.Tensor(np.ones(2), requires_grad=True)
    with N.no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_forward_is_deterministic():
    rng = np.random.default_rng(1)
    cell = LSTMCell(4, 5, rng)
    x = N.Tensor(rng.normal(size=(3, 6, 4)))
    a, _ = cell.run(x)
    b, _ = cell.run(x)
    assert np.array_equal(a.data, b.data)


# gradient checks ---------------------------------------------------------------


def _check(loss_fn, params, tol=1e-4):
    errs = N.check_gradients(loss_fn, params, h=1e-5, max_coords=40)
    assert max(errs.values()) <= tol, errs


@pytest.mark.parametrize("point", range(5))
def test_elementwise_gradients(point):
    rng = np.random.default_rng(100 + point)
    a, b = param(rng, 3, 4), param(rng, 4)
    w = probe(rng, (3, 4))
    pos = N.Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
    _check(
        lambda: N.tsum((N.tanh(a) * N.sigmoid(a + b) + N.exp(a * 0.3) - b * a) * w)
        + N.tsum(N.log(pos) * w)
        + N.tsum(N.logaddexp(a, b) * w)
        + N.tsum(a / 3.0),
        {"a": a, "b": b, "pos": pos},
    )


@pytest.mark.parametrize("point", range(5))
def test_structural_gradients(point):
    rng = np.random.default_rng(200 + point)
    a, b = param(rng, 2, 3, 4), param(rng, 4, 5)
    w, w2 = probe(rng, (2, 3, 5)), probe(rng, (2, 3, 4))
    _check(
        lambda: N.tsum(N.matmul(a, b) * w)
        + N.tsum(N.concat([a[:, 1:], a[:, :1]], axis=1) * w2)
        + N.tsum(N.stack([a[0], a[1] * 2.0], axis=0).reshape(2, 12).transpose() * N.Tensor(np.arange(24.0).reshape(12, 2))),
        {"a": a, "b": b},
    )


@pytest.mark.parametrize("point", range(5))
def test_softmax_gradients(point):
    rng = np.random.default_rng(300 + point)
    x = param(rng, 3, 6)
    w = probe(rng, (3, 6))
    _check(lambda: N.tsum(N.log_softmax(x) * w) + N.tsum(N.softmax(x * 2.0) * w), {"x": x})


@pytest.mark.parametrize("point", range(5))
def test_layer_gradients(point):
    rng = np.random.default_rng(400 + point)
    emb = Embedding(7, 3, rng)
    lin = Linear(3, 4, rng)
    ids = rng.integers(0, 7, size=(2, 5))
    w = probe(rng, (2, 5, 4))
    _check(lambda: N.tsum(lin(emb(ids)) * w), {"emb": emb.weight, "w": lin.weight, "b": lin.bias})


@pytest.mark.parametrize("point", range(5))
def test_lstm_step_gradients(point):
    rng = np.random.default_rng(500 + point)
    cell = LSTMCell(3, 4, rng)
    x, h, c = param(rng, 2, 3), param(rng, 2, 4), param(rng, 2, 4)
    w1, w2 = probe(rng, (2, 4)), probe(rng, (2, 4))

    def loss():
        h2, c2 = lstm_step((h, c), x, cell)
        return N.tsum(h2 * w1) + N.tsum(c2 * w2)

    _check(loss, {"x": x, "h": h, "c": c, "w_ih": cell.w_ih, "w_hh": cell.w_hh, "bias": cell.bias})


@pytest.mark.parametrize("reverse", [False, True])
@pytest.mark.parametrize("point", range(5))
def test_lstm_sequence_gradients(point, reverse):
    rng = np.random.default_rng(600 + point)
    cell = LSTMCell(3, 4, rng)
    x = param(rng, 2, 5, 3)
    h0, c0 = param(rng, 2, 4), param(rng, 2, 4)
    mask = np.ones((2, 5))
    mask[1, 3:] = 0
    w, wf = probe(rng, (2, 5, 4)), probe(rng, (2, 4))

    def loss():
        out, (h, c) = cell.run(x, mask=mask, reverse=reverse, state=(h0, c0))
        return N.tsum(out * w) + N.tsum(h * wf) + N.tsum(c * wf * 0.5)

    _check(loss, {"x": x, "h0": h0, "c0": c0, "w_ih": cell.w_ih, "w_hh": cell.w_hh, "bias": cell.bias})


@pytest.mark.parametrize("point", range(5))
def test_attention_gradients(point):
    rng = np.random.default_rng(700 + point)
    q, k, v = param(rng, 2, 3, 4), param(rng, 2, 5, 4), param(rng, 2, 5, 4)
    mask = np.ones((2, 5))
    mask[0, 4] = 0
    w = probe(rng, (2, 3, 4))
    _check(lambda: N.tsum(dot_attention(q, k, v, mask)[0] * w), {"q": q, "k": k, "v": v})


# softmax ---------------------------------------------------------------------


def test_softmax_examples():
    np.testing.assert_allclose(N.softmax(np.array([[0.0, 0.0]])).data, [[0.5, 0.5]])
    np.testing.assert_allclose(N.softmax(np.array([[np.log(2.0), 0.0]])).data, [[2 / 3, 1 / 3]])


def test_softmax_empty_rejected():
    with pytest.raises(ValueError):
        N.softmax(np.zeros((1, 0)))


@given(arrays(np.float64, st.integers(1, 12), elements=finite), st.floats(-50, 50))
@settings(max_examples=60, deadline=None)
def test_softmax_sums_to_one_and_shift_invariant(v, c):
    p = N.softmax(v[None, :]).data[0]
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) <= 1e-6
    np.testing.assert_allclose(N.softmax((v + c)[None, :]).data[0], p, atol=1e-9)


def test_softmax_large_logits_stable():
    p = N.softmax(np.array([[1000.0, 999.0]])).data
    assert np.isfinite(p).all()


# lstm / attention ----------------------------------------------------------------


def test_lstm_zero_weights_give_zero_state():
    rng = np.random.default_rng(0)
    cell = LSTMCell(3, 4, rng)
    for p in cell.parameters():
        p.data = np.zeros_like(p.data)
    h, c = lstm_step((N.Tensor(np.zeros((1, 4))), N.Tensor(np.zeros((1, 4)))), N.Tensor(np.ones((1, 3))), cell)
    assert np.all(h.data == 0) and np.all(c.data == 0)


def test_lstm_shapes_persist_and_mismatch_raises():
    rng = np.random.default_rng(0)
    cell = LSTMCell(3, 4, rng)
    state = cell.zero_state(2)
    x = N.Tensor(rng.normal(size=(2, 3)))
    for _ in range(5):
        state = lstm_step(state, x, cell)
        assert state[0].shape == (2, 4) and state[1].shape == (2, 4)
    with pytest.raises(ValueError):
        lstm_step(state, N.Tensor(np.ones((2, 5))), cell)


def test_lstm_init_ranges():
    cell = LSTMCell(3, 4, np.random.default_rng(0))
    assert np.all(np.abs(cell.w_ih.data) <= N.init_range(3))
    assert N.init_range(1000) == pytest.approx(0.1) and N.init_range(250) == pytest.approx(0.2)
    with N.init_reference(None):
        plain = LSTMCell(3, 4, np.random.default_rng(0))
        assert N.init_range(7) == 0.1
    assert np.all(np.abs(plain.w_ih.data) <= 0.1) and np.all(np.abs(plain.w_hh.data) <= 0.1)
    assert N.init_range(250) == pytest.approx(0.2)
    np.testing.assert_array_equal(cell.bias.data[4:8], 1.0)
    np.testing.assert_array_equal(cell.bias.data[:4], 0.0)


def test_fused_sequence_matches_stepwise():
    rng = np.random.default_rng(3)
    cell = LSTMCell(3, 4, rng)
    x = N.Tensor(rng.normal(size=(2, 6, 3)))
    mask = np.ones((2, 6))
    mask[0, 4:] = 0
    for reverse in (False, True):
        out, (h, _) = cell.run(x, mask=mask, reverse=reverse)
        state = cell.zero_state(2)
        outs = [None] * 6
        for t in (range(5, -1, -1) if reverse else range(6)):
            state = cell.step(x[:, t], state, mask=mask[:, t])
            outs[t] = state[0].data
        np.testing.assert_array_equal(out.data, np.stack(outs, axis=1))
        np.testing.assert_array_equal(h.data, state[0].data)


def test_attention_examples():
    rng = np.random.default_rng(0)
    v = rng.normal(size=4)
    ctx, w = attend(rng.normal(size=4), [rng.normal(size=4)], [v])
    np.testing.assert_allclose(ctx.data, v)
    keys = [np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0])]
    vals = [np.array([1.0, 2.0, 3.0]), np.array([3.0, 2.0, 1.0])]
    ctx, w = attend(np.array([1.0, 0.0, 0.0]), keys, vals)
    np.testing.assert_allclose(w.data, [0.5, 0.5])
    np.testing.assert_allclose(ctx.data, [2.0, 2.0, 2.0])
    with pytest.raises(ValueError):
        attend(np.ones(3), [], [])


@given(st.integers(1, 4), st.integers(1, 6), st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_attention_weights_sum_to_one(tq, s, seed):
    rng = np.random.default_rng(seed)
    _, w = dot_attention(rng.normal(size=(2, tq, 3)), rng.normal(size=(2, s, 3)), rng.normal(size=(2, s, 3)))
    np.testing.assert_allclose(w.data.sum(-1), 1.0, atol=1e-6)


# kernels -------------------------------------------------------------------------


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernels not built")
def test_compiled_kernels_match_numpy():
    rng = np.random.default_rng(0)
    py, cy = kernels.get_backend("numpy"), kernels.get_backend("cython")
    g = rng.normal(size=(5, 16)) * 4
    c, h = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    m = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
    for a, b in zip(py.lstm_forward(g, c, h, m), cy.lstm_forward(g, c, h, m)):
        np.testing.assert_allclose(a, b, atol=1e-13)
    h2, c2, acts, tc = py.lstm_forward(g, c, h, m)
    dh, dc = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    for a, b in zip(py.lstm_backward(dh, dc, acts, tc, c, m), cy.lstm_backward(dh, dc, acts, tc, c, m)):
        np.testing.assert_allclose(a, b, atol=1e-13)
    x = rng.normal(size=(3, 7)) * 10
    out = py.log_softmax_forward(x)
    np.testing.assert_allclose(out, cy.log_softmax_forward(x), atol=1e-13)
    gg = rng.normal(size=(3, 7))
    np.testing.assert_allclose(py.log_softmax_backward(gg, out), cy.log_softmax_backward(gg, out), atol=1e-13)


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_module_state_round_trip():
    rng = np.random.default_rng(0)
    a, b = Linear(3, 2, rng), Linear(3, 2, np.random.default_rng(1))
    b.load_state_dict(a.state_dict())
    x = rng.normal(size=(4, 3))
    assert np.array_equal(a(x).data, b(x).data)
    with pytest.raises(KeyError):
        b.load_state_dict({"weight": a.weight.data})
