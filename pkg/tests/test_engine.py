"""Tape engine checks against hand-derived values and central differences.

The oracle here is a test-local central-difference routine written before the
engine, plus a handful of frozen closed-form gradients.
"""

import numpy as np
import pytest
import scipy.sparse as sp

from graphslim.engine import (AdamState, EngineError, Tape, adam_step, backward,
                              fd_check)


def numeric_grad(f, x, eps=1e-6):
    """Independent central-difference oracle. f maps an ndarray to a float."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * eps)
    return g


def ad_grad(build, x):
    tape = Tape()
    leaf = tape.leaf(x, requires_grad=True)
    loss = build(tape, leaf)
    return backward(tape, loss)[leaf.nid]


def test_square_gradient_frozen():
    # d(x*x)/dx at 3 is 6
    tape = Tape()
    x = tape.leaf(3.0, requires_grad=True)
    loss = tape.mul(x, x)
    g = backward(tape, loss)[x.nid]
    assert g == pytest.approx(6.0, abs=1e-12)


def test_cross_entropy_frozen():
    # two equal logits, true class 0: loss log 2, grad [-0.5, 0.5]
    tape = Tape()
    logits = tape.leaf(np.zeros((1, 2)), requires_grad=True)
    loss = tape.cross_entropy(logits, np.array([0]))
    assert float(loss.value) == pytest.approx(np.log(2.0), abs=1e-12)
    g = backward(tape, loss)[logits.nid]
    assert np.allclose(g, [[-0.5, 0.5]], atol=1e-12)


def test_kappa_values_frozen():
    tape = Tape()
    u = tape.constant(np.array([-1.0, 0.0, 1.0]))
    k0 = tape.kappa0(u).value
    k1 = tape.kappa1(u).value
    assert np.allclose(k0, [0.0, 0.5, 1.0], atol=1e-12)
    assert np.allclose(k1, [0.0, 1.0 / np.pi, 1.0], atol=1e-12)


def _rng(seed=0):
    return np.random.default_rng(seed)


UNARY_CASES = [
    ("relu", lambda t, x: t.relu(x), 0.3),
    ("leaky_relu", lambda t, x: t.leaky_relu(x, 0.1), 0.3),
    ("relu6", lambda t, x: t.relu6(x), 0.3),
    ("elu", lambda t, x: t.elu(x), 0.3),
    ("sigmoid", lambda t, x: t.sigmoid(x), 0.0),
    ("tanh", lambda t, x: t.tanh(x), 0.0),
    ("softplus", lambda t, x: t.softplus(x), 0.0),
    ("exp", lambda t, x: t.exp(x), 0.0),
    ("log", lambda t, x: t.log(x), 3.0),
    ("pow", lambda t, x: t.pow_const(x, 1.7), 2.0),
    ("clip", lambda t, x: t.clip(x, -0.5, 0.5), 0.1),
    ("transpose", lambda t, x: t.transpose(x), 0.0),
    ("log_softmax", lambda t, x: t.log_softmax(x), 0.0),
    ("neg", lambda t, x: t.neg(x), 0.0),
]


@pytest.mark.parametrize("name,op,shift", UNARY_CASES, ids=[c[0] for c in UNARY_CASES])
def test_unary_gradients(name, op, shift):
    rng = _rng(7)
    x0 = rng.normal(size=(3, 4)) * 0.9 + shift

    def build(tape, x):
        y = op(tape, x)
        return tape.sum(tape.mul(y, y))

    def value(x):
        tape = Tape()
        return float(build(tape, tape.leaf(x)).value)

    assert np.allclose(ad_grad(build, x0), numeric_grad(value, x0), atol=1e-6)


def test_binary_and_matmul_gradients():
    rng = _rng(3)
    a0 = rng.normal(size=(3, 4)) + 2.5
    b0 = rng.normal(size=(4, 2))

    def build(tape, a):
        b = tape.leaf(b0)
        h = tape.matmul(a, b)
        h = tape.div(tape.mul(h, h), tape.add(tape.sub(a, 0.0), 3.0) @ b)
        return tape.sum(h)

    def value(a):
        tape = Tape()
        return float(build(tape, tape.leaf(a)).value)

    assert np.allclose(ad_grad(build, a0), numeric_grad(value, a0), atol=1e-6)


def test_broadcast_gradients():
    rng = _rng(11)
    x0 = rng.normal(size=(1, 4))
    y0 = rng.normal(size=(3, 4))

    def build(tape, x):
        y = tape.constant(y0)
        return tape.sum(tape.mul(tape.add(x, y), tape.sub(y, x)))

    def value(x):
        tape = Tape()
        return float(build(tape, tape.leaf(x)).value)

    assert np.allclose(ad_grad(build, x0), numeric_grad(value, x0), atol=1e-7)


def test_indexing_and_concat_gradients():
    rng = _rng(5)
    x0 = rng.normal(size=(5, 3))
    idx = np.array([0, 2, 2, 4])

    def build(tape, x):
        taken = tape.take_rows(x, idx)
        back = tape.scatter_rows(taken, idx, 5)
        both = tape.concat([back, x], axis=1)
        part = tape.slice_axis(both, 1, 1, 5)
        return tape.sum(tape.mul(part, part))

    def value(x):
        tape = Tape()
        return float(build(tape, tape.leaf(x)).value)

    assert np.allclose(ad_grad(build, x0), numeric_grad(value, x0), atol=1e-6)


def test_spmm_matches_dense():
    rng = _rng(9)
    s = sp.random(6, 5, density=0.4, random_state=1, format="csr", dtype=np.float64)
    h0 = rng.normal(size=(5, 3))

    def build_sparse(tape, h):
        return tape.sum(tape.tanh(tape.matmul(s, h)))

    def build_dense(tape, h):
        return tape.sum(tape.tanh(tape.matmul(tape.constant(s.toarray()), h)))

    assert np.allclose(ad_grad(build_sparse, h0), ad_grad(build_dense, h0), atol=1e-12)
    tape = Tape()
    out = tape.matmul(s, tape.leaf(h0))
    assert np.allclose(out.value, s.toarray() @ h0, atol=1e-12)


def test_solve_gradient():
    rng = _rng(13)
    r = rng.normal(size=(4, 4))
    a0 = r @ r.T + 4 * np.eye(4)
    b0 = rng.normal(size=(4, 2))

    def build(tape, a):
        x = tape.solve(a, tape.leaf(b0))
        return tape.sum(tape.mul(x, x))

    def value(a):
        tape = Tape()
        return float(build(tape, tape.leaf(a)).value)

    assert np.allclose(ad_grad(build, a0), numeric_grad(value, a0), atol=1e-5)

    def build_b(tape, b):
        x = tape.solve(tape.leaf(a0), b)
        return tape.sum(tape.mul(x, x))

    def value_b(b):
        tape = Tape()
        return float(build_b(tape, tape.leaf(b)).value)

    assert np.allclose(ad_grad(build_b, b0), numeric_grad(value_b, b0), atol=1e-6)


def test_pair_aggregate_gradients():
    rng = _rng(17)
    h0 = rng.normal(size=(5, 3))
    w0 = rng.normal(size=(4,))
    pairs = (np.array([0, 1, 0, 3]), np.array([2, 3, 4, 4]))

    def dense_equiv(w, h):
        a = np.zeros((5, 5))
        np.add.at(a, pairs, w)
        a = a + a.T
        return a @ h

    tape = Tape()
    wn, hn = tape.leaf(w0, True), tape.leaf(h0, True)
    out = tape.pair_aggregate(wn, pairs, hn)
    assert np.allclose(out.value, dense_equiv(w0, h0), atol=1e-12)

    loss = tape.sum(tape.mul(out, out))
    grads = backward(tape, loss)

    def value_w(w):
        t = Tape()
        o = t.pair_aggregate(t.leaf(w), pairs, t.leaf(h0))
        return float(t.sum(t.mul(o, o)).value)

    def value_h(h):
        t = Tape()
        o = t.pair_aggregate(t.leaf(w0), pairs, t.leaf(h))
        return float(t.sum(t.mul(o, o)).value)

    assert np.allclose(grads[wn.nid], numeric_grad(value_w, w0), atol=1e-6)
    assert np.allclose(grads[hn.nid], numeric_grad(value_h, h0), atol=1e-6)


def test_kappa_gradients():
    rng = _rng(19)
    u0 = rng.uniform(-0.95, 0.95, size=(6,))

    for op in ("kappa0", "kappa1"):
        def build(tape, u, op=op):
            return tape.sum(getattr(tape, op)(u))

        def value(u, op=op):
            tape = Tape()
            return float(build(tape, tape.leaf(u)).value)

        assert np.allclose(ad_grad(build, u0), numeric_grad(value, u0), atol=1e-6)


def test_second_order_cubic():
    # d2/dx2 of x^3 is 6x, so 12 at x=2
    tape = Tape()
    x = tape.leaf(2.0, requires_grad=True)
    y = tape.mul(tape.mul(x, x), x)
    (g1,) = tape.grad(y, [x])
    (g2,) = tape.grad(g1, [x])
    assert float(g1.value) == pytest.approx(12.0, abs=1e-10)
    assert float(g2.value) == pytest.approx(12.0, abs=1e-10)


def test_second_order_through_inner_step():
    # differentiate a loss evaluated after one explicit gradient step, the
    # pattern trajectory matching relies on
    rng = _rng(23)
    x0 = rng.normal(size=(3, 2))
    target = rng.normal(size=(2, 2))
    data = rng.normal(size=(4, 3))
    lr = 0.1

    def build(tape, x):
        w = tape.leaf(np.full((3, 2), 0.3), requires_grad=True)
        inner = tape.sum(tape.mul(tape.matmul(tape.constant(data), w), tape.matmul(
            tape.constant(data), tape.mul(w, tape.sum(tape.mul(x, x))))))
        (gw,) = tape.grad(inner, [w])
        w1 = tape.sub(w, tape.mul(gw, lr))
        diff = tape.sub(tape.matmul(tape.transpose(x), w1), tape.constant(target))
        return tape.sum(tape.mul(diff, diff))

    def value(x):
        tape = Tape()
        return float(build(tape, tape.leaf(x)).value)

    assert np.allclose(ad_grad(build, x0), numeric_grad(value, x0), atol=1e-5)


def test_unused_leaf_gets_zero_gradient():
    tape = Tape()
    x = tape.leaf(np.ones(3), requires_grad=True)
    y = tape.leaf(2.0, requires_grad=True)
    loss = tape.mul(y, y)
    grads = backward(tape, loss)
    assert np.allclose(grads[x.nid], 0.0)
    assert grads[y.nid] == pytest.approx(4.0)


def test_nonfinite_raises():
    tape = Tape()
    x = tape.leaf(np.array([0.0]), requires_grad=True)
    with np.errstate(all="ignore"):
        with pytest.raises(EngineError):
            tape.log(x)
        with pytest.raises(EngineError):
            tape.div(tape.constant(1.0), tape.constant(0.0))


def test_fd_check_agrees_with_local_oracle():
    rng = _rng(29)
    point = {"w": rng.normal(size=(3, 2)), "b": rng.normal(size=(2,))}
    data = rng.normal(size=(4, 3))

    def f(tape, leaves):
        h = tape.add(tape.matmul(tape.constant(data), leaves["w"]), leaves["b"])
        return tape.sum(tape.sigmoid(h))

    assert fd_check(f, point) < 1e-7


def test_adam_two_step_recurrence():
    # independent recurrence written out longhand
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    x = 1.0
    m = v = 0.0
    for t, g in [(1, 0.5), (2, -0.25)]:
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)

    params = {"x": np.array(1.0)}
    state = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps)
    params, state = adam_step(params, {"x": np.array(0.5)}, state)
    params, state = adam_step(params, {"x": np.array(-0.25)}, state)
    assert float(params["x"]) == pytest.approx(x, abs=1e-12)
    assert state.step == 2


def test_gradient_accumulates_over_reuse():
    tape = Tape()
    x = tape.leaf(np.array([1.5, -0.5]), requires_grad=True)
    y = tape.add(tape.mul(x, x), tape.mul(x, 3.0))
    g = backward(tape, tape.sum(y))[x.nid]
    assert np.allclose(g, 2 * x.value + 3.0, atol=1e-12)
