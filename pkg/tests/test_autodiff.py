import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from crac.autodiff import (
    AutodiffError,
    Graph,
    NonFiniteError,
    ShapeError,
    backward,
    grad_check,
)


def conv2d_oracle(x, w, b):
    """Direct zero-padded correlation, one output pixel at a time."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    p = k // 2
    out = np.zeros((n, o, h, wd))
    for i in range(n):
        for oc in range(o):
            for y in range(h):
                for xx in range(wd):
                    acc = b[oc]
                    for ic in range(c):
                        for dy in range(k):
                            for dx in range(k):
                                yy, xq = y + dy - p, xx + dx - p
                                if 0 <= yy < h and 0 <= xq < wd:
                                    acc += x[i, ic, yy, xq] * w[oc, ic, dy, dx]
                    out[i, oc, y, xx] = acc
    return out


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 1, 5, 6))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1
    g = Graph()
    out = g.conv2d(x, w, np.zeros(1))
    np.testing.assert_array_equal(out.data, x)


def test_conv2d_all_ones_on_2x2():
    g = Graph()
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    out = g.conv2d(x, np.ones((1, 1, 3, 3)), np.zeros(1))
    expected = conv2d_oracle(x, np.ones((1, 1, 3, 3)), np.zeros(1))
    np.testing.assert_array_equal(expected[0, 0], [[10, 10], [10, 10]])
    np.testing.assert_array_equal(out.data, expected)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_conv2d_matches_direct_sum(k):
    rng = np.random.default_rng(k)
    x = rng.normal(size=(2, 3, 5, 4))
    w = rng.normal(size=(2, 3, k, k))
    b = rng.normal(size=2)
    out = Graph().conv2d(x, w, b)
    np.testing.assert_allclose(out.data, conv2d_oracle(x, w, b), rtol=1e-12, atol=1e-12)


def test_softmax_of_equal_logits_is_uniform():
    out = Graph().softmax(np.full((1, 4, 2, 2), 3.7))
    np.testing.assert_allclose(out.data, 0.25, rtol=0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, (2, 4, 3), elements=st.floats(-30, 30)),
    st.floats(-100, 100),
)
def test_softmax_normalised_and_shift_invariant(x, c):
    g = Graph()
    s = g.softmax(x).data
    np.testing.assert_allclose(s.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    shifted = g.softmax(x + c).data
    np.testing.assert_allclose(shifted, s, rtol=0, atol=1e-12)


def test_backward_of_sum_is_ones():
    g = Graph()
    x = g.param(np.arange(6.0).reshape(2, 3), "x")
    grads = backward(g, g.sum(x))
    np.testing.assert_array_equal(grads["x"], np.ones((2, 3)))


def test_backward_of_sum_of_squares_is_twice_x():
    rng = np.random.default_rng(1)
    xv = rng.normal(size=(3, 4))
    g = Graph()
    x = g.param(xv, "x")
    grads = backward(g, g.sum(x * x))
    np.testing.assert_allclose(grads["x"], 2 * xv, rtol=1e-15)


def test_constants_do_not_receive_gradients():
    g = Graph()
    x = g.param(np.ones(3), "x")
    c = g.constant(np.arange(3.0))
    grads = backward(g, g.sum(x * c))
    assert set(grads) == {"x"}
    np.testing.assert_array_equal(grads["x"], np.arange(3.0))


def test_gradients_accumulate_over_reuse():
    g = Graph()
    x = g.param(np.array([1.5, -2.0]), "x")
    y = x * x + x * 3.0
    grads = backward(g, g.sum(y))
    np.testing.assert_allclose(grads["x"], 2 * np.array([1.5, -2.0]) + 3)


def test_errors():
    g = Graph()
    a = g.param(np.ones((2, 3)), "a")
    with pytest.raises(ShapeError):
        g.add(a, np.ones((3, 2)))
    with pytest.raises(ShapeError):
        g.matmul(a, np.ones((2, 2)))
    with pytest.raises(ShapeError):
        g.max_pool2(np.ones((1, 1, 3, 4)))
    with pytest.raises(NonFiniteError):
        g.log(np.array([-1.0, 1.0]))
    with pytest.raises(NonFiniteError):
        g.exp(np.array([1000.0]))
    with pytest.raises(ShapeError):
        backward(g, a)
    with pytest.raises(AutodiffError):
        backward(Graph(), g.sum(a))
    with pytest.raises(AutodiffError):
        g.param(np.ones(1), "a")


def test_topological_order_and_replay_determinism():
    rng = np.random.default_rng(3)
    g = Graph()
    x = g.constant(rng.normal(size=(2, 2, 4, 4)))
    w = g.param(rng.normal(size=(3, 2, 3, 3)), "w")
    b = g.param(rng.normal(size=3), "b")
    h = g.relu(g.conv2d(x, w, b))
    loss = g.mean(g.softmax_cross_entropy(h, g.softmax(h)))
    for i, node in enumerate(g.nodes):
        assert all(j < i for j in node.inputs)
    v1, _ = g.replay()
    v2, _ = g.replay()
    for a, b_, orig in zip(v1, v2, g.values):
        assert a.tobytes() == b_.tobytes() == orig.tobytes()
    assert loss.item() == float(v1[loss.index])


def test_grad_check_quadratic():
    g = Graph()
    x = g.param(np.array([0.3, -1.2, 2.0]), "x")
    loss = g.sum(x * x * 2.0 + x)
    report = grad_check(g, loss)
    assert report.passed
    assert report.worst < 1e-6


def test_grad_check_phr_away_from_kink_and_at_kink():
    g = Graph()
    z = g.param(np.array([0.7, -0.2, 1.5]), "z")
    rho, lam = np.full(3, 2.0), np.full(3, 0.5)
    report = grad_check(g, g.sum(g.phr(z, rho, lam)), tolerance=1e-4)
    assert report.passed and not report.excluded_point

    g = Graph()
    z = g.param(np.array([-lam[0] / rho[0]]), "z")  # lam + rho z = 0
    report = grad_check(g, g.sum(g.phr(z, rho[:1], lam[:1])))
    assert report.excluded_point
    assert not report.passed


def test_grad_check_flags_relu_at_origin():
    g = Graph()
    x = g.param(np.array([0.0, 1.0]), "x")
    report = grad_check(g, g.sum(g.relu(x)))
    assert report.excluded_point


def test_grad_check_detects_wrong_gradient(monkeypatch):
    from crac import autodiff

    prim = autodiff.PRIMITIVES["exp"]
    broken = autodiff.Primitive(prim.forward, lambda g, vals, out, ctx: [2 * g * out])
    monkeypatch.setitem(autodiff.PRIMITIVES, "exp", broken)
    g = Graph()
    x = g.param(np.array([0.1, 0.2]), "x")
    assert not grad_check(g, g.sum(g.exp(x))).passed


# --- finite differences for every primitive on 100 random instances ---------


def _loss_from(g, out, rng):
    weights = g.constant(rng.uniform(-1, 1, out.shape))
    return g.sum(out * weights) if out.ndim else out


def _nchw(rng, shape=None):
    shape = shape or (2, 3, 4, 4)
    return rng.uniform(-2, 2, shape)


def _build(op, g, rng):
    if op in ("add", "sub", "mul"):
        a = g.param(rng.uniform(-2, 2, (3, 4)), "a")
        b = g.param(rng.uniform(-2, 2, (3, 4)), "b")
        return getattr(g, op)(a, b)
    if op == "scalar_broadcast":
        a = g.param(rng.uniform(-2, 2, (3, 4)), "a")
        s = g.param(rng.uniform(-2, 2, ()), "s")
        return g.mul(a, s) + s
    if op == "scale":
        return g.scale(g.param(rng.uniform(-2, 2, (5,)), "a"), rng.uniform(-3, 3))
    if op == "matmul":
        return g.matmul(g.param(rng.uniform(-2, 2, (3, 4)), "a"), g.param(rng.uniform(-2, 2, (4, 2)), "b"))
    if op == "conv2d":
        x = g.param(_nchw(rng), "x")
        w = g.param(rng.uniform(-2, 2, (2, 3, 3, 3)), "w")
        b = g.param(rng.uniform(-2, 2, 2), "b")
        return g.conv2d(x, w, b)
    if op == "relu":
        return g.relu(g.param(_nchw(rng), "x"))
    if op == "max_pool2":
        return g.max_pool2(g.param(_nchw(rng), "x"))
    if op == "upsample2":
        return g.upsample2(g.param(_nchw(rng, (1, 2, 2, 3)), "x"))
    if op == "concat":
        return g.concat(g.param(_nchw(rng, (2, 1, 3, 3)), "a"), g.param(_nchw(rng, (2, 2, 3, 3)), "b"))
    if op == "exp":
        return g.exp(g.param(rng.uniform(-2, 2, (6,)), "x"))
    if op == "log":
        return g.log(g.param(rng.uniform(0.2, 2, (6,)), "x"))
    if op == "abs":
        return g.abs(g.param(rng.uniform(-2, 2, (6,)), "x"))
    if op == "pow":
        return g.pow(g.param(rng.uniform(0.2, 2, (6,)), "x"), 3.0)
    if op == "sum":
        return g.sum(g.param(_nchw(rng), "x"), axis=1)
    if op == "mean":
        return g.mean(g.param(_nchw(rng), "x"), axis=(0, 2))
    if op == "softmax":
        return g.softmax(g.param(_nchw(rng), "x"))
    if op == "log_softmax":
        return g.log_softmax(g.param(_nchw(rng), "x"))
    if op == "softmax_cross_entropy":
        t = rng.dirichlet(np.ones(3), size=(2, 4, 4)).transpose(0, 3, 1, 2)
        return g.softmax_cross_entropy(g.param(_nchw(rng), "x"), g.constant(t))
    if op == "max_channel":
        return g.max_channel(g.param(_nchw(rng), "x"))
    if op == "phr":
        shape = (2, 3, 2, 2)
        return g.phr(g.param(_nchw(rng, shape), "z"), rng.uniform(0.1, 3, shape), rng.uniform(0.05, 2, shape))
    raise KeyError(op)


PRIMITIVE_CASES = [
    "add", "sub", "mul", "scalar_broadcast", "scale", "matmul", "conv2d", "relu",
    "max_pool2", "upsample2", "concat", "exp", "log", "abs", "pow", "sum", "mean",
    "softmax", "log_softmax", "softmax_cross_entropy", "max_channel", "phr",
]


@pytest.mark.parametrize("op", PRIMITIVE_CASES)
def test_primitive_matches_finite_differences(op):
    rng = np.random.default_rng(zlib.crc32(op.encode()))
    checked = 0
    for trial in range(100):
        g = Graph(np.float64)
        out = _build(op, g, rng)
        loss = _loss_from(g, out, rng)
        report = grad_check(g, loss, step=1e-4, tolerance=1e-3)
        if report.excluded_point:
            continue
        assert report.passed, (op, trial, report.max_rel_error)
        checked += 1
    assert checked >= 95
