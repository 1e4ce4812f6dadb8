import numpy as np
import pytest

from ambientgan import tape as T
from ambientgan.gradcheck import analytic_gradient, check_gradients


def _away_from_zero(rng, shape):
    x = rng.uniform(0.05, 2.0, shape)
    return x * rng.choice([-1.0, 1.0], shape)


def _weighted(out, w):
    return T.sum(T.mul(out, w))


# each builder returns (fn, inputs); fn reduces to a scalar with random weights
def _case(kind, rng):
    b, n, m = rng.integers(1, 4), rng.integers(1, 5), rng.integers(1, 5)
    if kind == "add":
        a, c = rng.normal(size=(b, n)), rng.normal(size=(n,))
        w = rng.normal(size=(b, n))
        return (lambda x, y: _weighted(T.add(x, y), w)), [a, c]
    if kind == "sub":
        a, c = rng.normal(size=(b, n)), rng.normal(size=(1, n))
        w = rng.normal(size=(b, n))
        return (lambda x, y: _weighted(T.sub(x, y), w)), [a, c]
    if kind == "mul":
        a, c = rng.normal(size=(b, n)), rng.normal(size=(b, n))
        w = rng.normal(size=(b, n))
        return (lambda x, y: _weighted(T.mul(x, y), w)), [a, c]
    if kind == "neg":
        w = rng.normal(size=(b, n))
        return (lambda x: _weighted(T.neg(x), w)), [rng.normal(size=(b, n))]
    if kind == "matmul":
        a, c = rng.normal(size=(b, n)), rng.normal(size=(n, m))
        w = rng.normal(size=(b, m))
        return (lambda x, y: _weighted(T.matmul(x, y), w)), [a, c]
    if kind == "leaky_relu":
        w = rng.normal(size=(b, n))
        return (lambda x: _weighted(T.leaky_relu(x), w)), [_away_from_zero(rng, (b, n))]
    if kind in ("sigmoid", "tanh", "log_sigmoid"):
        w = rng.normal(size=(b, n))
        f = getattr(T, kind)
        return (lambda x: _weighted(f(x), w)), [rng.normal(scale=2.0, size=(b, n))]
    if kind == "log":
        w = rng.normal(size=(b, n))
        return (lambda x: _weighted(T.log(x), w)), [rng.uniform(0.5, 3.0, (b, n))]
    if kind == "sum":
        w = rng.normal(size=(n,))
        return (lambda x: _weighted(T.sum(x, axis=0), w)), [rng.normal(size=(b, n))]
    if kind == "mean":
        w = rng.normal(size=(b,))
        return (lambda x: _weighted(T.mean(x, axis=1), w)), [rng.normal(size=(b, n))]
    if kind == "reshape":
        w = rng.normal(size=(b * n,))
        return (lambda x: _weighted(T.reshape(x, (b * n,)), w)), [rng.normal(size=(b, n))]
    if kind == "concat":
        a, c = rng.normal(size=(b, n)), rng.normal(size=(b, m))
        w = rng.normal(size=(b, n + m))
        return (lambda x, y: _weighted(T.concat([x, y], axis=1), w)), [a, c]
    if kind == "gather":
        idx = rng.integers(0, n, (b, m))
        w = rng.normal(size=(b, m))
        return (lambda x: _weighted(T.gather(x, idx), w)), [rng.normal(size=(b, n))]
    if kind == "pad2d":
        w = rng.normal(size=(b, n + 4, m + 4))
        return (lambda x: _weighted(T.pad2d(x, 2), w)), [rng.normal(size=(b, n, m))]
    if kind == "correlate2d":
        k = rng.normal(size=(3, 3))
        w = rng.normal(size=(b, n, m))
        return (lambda x: _weighted(T.correlate2d(x, k), w)), [rng.normal(size=(b, n, m))]
    if kind == "grid_sample":
        coords = rng.uniform(-1.0, max(n, m) + 1.0, (b, 3, 3, 2))
        w = rng.normal(size=(b, 3, 3))
        return (lambda x: _weighted(T.grid_sample(x, coords), w)), [rng.normal(size=(b, n, m))]
    raise KeyError(kind)


OP_KINDS = ["add", "sub", "mul", "neg", "matmul", "leaky_relu", "sigmoid", "tanh", "log",
            "log_sigmoid", "sum", "mean", "reshape", "concat", "gather", "pad2d", "correlate2d",
            "grid_sample"]


@pytest.mark.parametrize("kind", OP_KINDS)
def test_op_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(OP_KINDS.index(kind))
    worst = max(check_gradients(*_case(kind, rng)) for _ in range(50))
    assert worst < 1e-5


def test_every_registered_op_is_checked():
    assert set(T.OPS) == set(OP_KINDS)


def test_matmul_of_ones():
    out = T.op_forward("matmul", [np.ones((2, 3)), np.ones((3, 2))])
    np.testing.assert_array_equal(out.values, np.full((2, 2), 3.0))


def test_sigmoid_at_zero():
    assert T.sigmoid(0.0).values == 0.5


def test_leaky_relu_slope():
    assert T.leaky_relu(-1.0).values == pytest.approx(-0.2)
    assert T.leaky_relu(3.0).values == 3.0


def test_quadratic_gradient():
    (g,) = analytic_gradient(lambda w: T.sum(w * w), [np.array([1.0, 2.0, 3.0])])
    np.testing.assert_array_equal(g, [2.0, 4.0, 6.0])


def test_sigmoid_gradient_at_zero():
    (g,) = analytic_gradient(lambda w: T.sum(T.sigmoid(w)), [np.array([0.0])])
    assert g[0] == 0.25


def test_three_layer_composite_matches_finite_differences():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(5, 4))
    params = [rng.normal(size=(4, 6)), rng.normal(size=6), rng.normal(size=(6, 3)),
              rng.normal(size=3), rng.normal(size=(3, 1)), rng.normal(size=1)]

    def net(w0, b0, w1, b1, w2, b2):
        h = T.leaky_relu(T.matmul(x, w0) + b0)
        h = T.tanh(T.matmul(h, w1) + b1)
        return T.mean(T.log_sigmoid(T.matmul(h, w2) + b2))

    assert check_gradients(net, params) < 1e-5


def test_backward_is_linear():
    rng = np.random.default_rng(3)
    w = rng.normal(size=(4,))
    a, b = 1.7, -0.4
    f = lambda v: T.sum(T.tanh(v))  # noqa: E731
    g = lambda v: T.sum(v * v * v)  # noqa: E731
    (combo,) = analytic_gradient(lambda v: a * f(v) + b * g(v), [w])
    (gf,) = analytic_gradient(f, [w])
    (gg,) = analytic_gradient(g, [w])
    np.testing.assert_allclose(combo, a * gf + b * gg, rtol=1e-14, atol=1e-14)


def test_replay_is_bit_identical():
    rng = np.random.default_rng(11)
    inputs = [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))]
    fn = lambda x, y: T.sum(T.sigmoid(T.matmul(x, y)))  # noqa: E731
    first = analytic_gradient(fn, inputs)
    second = analytic_gradient(fn, inputs)
    for p, q in zip(first, second):
        assert p.tobytes() == q.tobytes()


def test_non_ancestors_get_zero_gradient():
    with T.Tape() as tape:
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        unused = T.Tensor([5.0], requires_grad=True)
        side = T.tanh(unused)
        root = T.sum(x * x)
        grads = tape.backward(root)
    assert set(grads) == set(range(len(tape.nodes)))
    np.testing.assert_array_equal(grads[unused.node], [0.0])
    np.testing.assert_array_equal(grads[side.node], [0.0])
    np.testing.assert_array_equal(grads[x.node], [2.0, 4.0])


def test_tape_is_topological():
    with T.Tape() as tape:
        x = T.Tensor(np.ones((2, 2)), requires_grad=True)
        T.sum(T.tanh(T.matmul(x, x)) + x)
    for i, node in enumerate(tape.nodes):
        assert all(j < i for j in node.inputs)


def test_constants_record_nothing():
    with T.Tape() as tape:
        T.sum(T.tanh(T.Tensor(np.ones(3))))
    assert tape.nodes == []


def test_non_scalar_root_rejected():
    with T.Tape():
        x = T.Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            T.backward(x * 2.0)


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(T.ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        T.matmul(np.ones((2, 3)), np.ones((2, 2)))
    with pytest.raises(T.ShapeError, match=r"\(3,\).*\(4,\)"):
        T.add(np.ones(3), np.ones(4))


def test_log_domain_error():
    with pytest.raises(T.DomainError):
        T.log(np.array([1.0, 0.0]))
    with pytest.raises(T.DomainError):
        T.log(np.array([-1.0]))


def test_guarded_ops_stay_finite_at_extremes():
    x = np.array([-1e4, -50.0, 0.0, 50.0, 1e4])
    for fn in (T.sigmoid, T.tanh, T.log_sigmoid):
        assert np.all(np.isfinite(fn(x).values))
    np.testing.assert_allclose(T.log_sigmoid(x).values[[0, -1]], [-1e4, 0.0])


def test_unknown_op_kind():
    with pytest.raises(ValueError):
        T.op_forward("fft", [np.ones(2)])


def test_requires_grad_needs_tape():
    with pytest.raises(RuntimeError):
        T.Tensor([1.0], requires_grad=True)
