import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ali_lab.autodiff import (
    OPS,
    ContractError,
    DomainError,
    ShapeError,
    Tape,
    backward,
    forward_op,
    gradient_check,
)

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def _grad(fn, *values):
    tape = Tape()
    leaves = [tape.variable(v) for v in values]
    out = fn(tape, *leaves)
    grads = backward(tape, out)
    return out, [grads[leaf] for leaf in leaves]


# -- forward values -------------------------------------------------------


def test_sigmoid_at_zero_is_half():
    tape = Tape()
    assert forward_op("sigmoid", tape.constant([0.0]), tape=tape).numpy().tolist() == [0.5]


def test_leaky_relu_slope_001():
    tape = Tape()
    out = forward_op("leaky_relu", tape.constant([-1.0, 2.0]), tape=tape, slope=0.01)
    np.testing.assert_allclose(out.numpy(), [-0.01, 2.0], rtol=0, atol=1e-15)


def test_matmul_of_ones_gives_row_sums():
    tape = Tape()
    out = forward_op("matmul", tape.constant(np.ones((2, 3))), tape.constant(np.ones((3, 1))), tape=tape)
    assert out.shape == (2, 1)
    assert out.numpy().tolist() == [[3.0], [3.0]]


def test_forward_appends_one_node_per_op():
    tape = Tape()
    a, b = tape.variable(np.ones(3)), tape.variable(np.ones(3))
    n = len(tape)
    forward_op("add", a, b, tape=tape)
    assert len(tape) == n + 1


def test_softplus_is_stable_for_large_logits():
    tape = Tape()
    out = tape.softplus(tape.constant([-800.0, 0.0, 800.0])).numpy()
    np.testing.assert_allclose(out, [0.0, np.log(2.0), 800.0], rtol=1e-15, atol=1e-300)


# -- errors ---------------------------------------------------------------


def test_shape_mismatch_names_op_and_shapes():
    tape = Tape()
    with pytest.raises(ShapeError) as err:
        tape.add(tape.constant(np.ones((2, 3))), tape.constant(np.ones((3, 2))))
    msg = str(err.value)
    assert "add" in msg and "(2, 3)" in msg and "(3, 2)" in msg


def test_matmul_inner_mismatch():
    tape = Tape()
    with pytest.raises(ShapeError):
        tape.matmul(tape.constant(np.ones((2, 3))), tape.constant(np.ones((2, 3))))


def test_logarithm_of_nonpositive_is_domain_error():
    tape = Tape()
    with pytest.raises(DomainError):
        tape.logarithm(tape.constant([1.0, 0.0]))
    with pytest.raises(DomainError):
        tape.logarithm(tape.constant([-2.0]))


def test_backward_requires_scalar_output():
    tape = Tape()
    x = tape.variable(np.ones(3))
    with pytest.raises(ContractError):
        backward(tape, tape.square(x))


def test_unknown_op_rejected():
    with pytest.raises(ContractError):
        forward_op("convolve", tape=Tape())


# -- gradients --------------------------------------------------------------


def test_square_gradient_at_three():
    _, (g,) = _grad(lambda t, x: t.sum(x * x), np.array([3.0]))
    assert g.tolist() == [6.0]


def test_sigmoid_gradient_at_zero():
    _, (g,) = _grad(lambda t, x: t.sum(t.sigmoid(x)), np.array([0.0]))
    assert g.tolist() == [0.25]


def test_fan_out_accumulates_exactly():
    x0 = np.array([0.3, -1.2, 2.0])
    _, (g_sum,) = _grad(lambda t, x: t.sum(t.tanh(x)) + t.sum(t.square(x)), x0)
    _, (g_a,) = _grad(lambda t, x: t.sum(t.tanh(x)), x0)
    _, (g_b,) = _grad(lambda t, x: t.sum(t.square(x)), x0)
    assert np.array_equal(g_sum, g_a + g_b)


def test_unused_leaf_gets_zero_gradient():
    _, (ga, gb) = _grad(lambda t, a, b: t.sum(a), np.ones(2), np.ones((3, 2)))
    assert gb.shape == (3, 2) and not gb.any()
    assert ga.tolist() == [1.0, 1.0]


def test_concat_backward_splits_shapes():
    a0, b0 = np.arange(6.0).reshape(2, 3), np.arange(4.0).reshape(2, 2)
    w = np.linspace(-1, 1, 10).reshape(2, 5)

    def f(t, a, b):
        return t.sum(t.concat_last_axis(a, b) * t.constant(w))

    _, (ga, gb) = _grad(f, a0, b0)
    assert ga.shape == a0.shape and gb.shape == b0.shape
    np.testing.assert_array_equal(ga, w[:, :3])
    np.testing.assert_array_equal(gb, w[:, 3:])


def test_backward_is_bitwise_deterministic():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((4, 3)), rng.standard_normal((3, 2))

    def f(t, x, y):
        return t.mean(t.softplus(t.matmul(x, y)))

    _, g1 = _grad(f, a, b)
    _, g2 = _grad(f, a, b)
    for u, v in zip(g1, g2):
        assert u.tobytes() == v.tobytes()


def test_gradient_check_constant_function_is_zero():
    assert gradient_check(lambda t, x: t.sum(t.constant(np.ones(3))), np.ones(3)) == 0.0


def test_gradient_check_quadratic():
    x = np.random.default_rng(0).standard_normal(5)
    assert gradient_check(lambda t, v: t.sum(t.square(v)), x) < 1e-7


# Every primitive, wrapped so the output is a scalar. Positive inputs for log,
# inputs kept away from kinks for leaky_relu and clip.
UNARY = {
    "negate": lambda t, x: t.negate(x),
    "exponential": lambda t, x: t.exponential(x),
    "logarithm": lambda t, x: t.logarithm(t.exponential(x)),
    "sigmoid": lambda t, x: t.sigmoid(x),
    "tanh": lambda t, x: t.tanh(x),
    "leaky_relu": lambda t, x: t.leaky_relu(x, 0.02),
    "square": lambda t, x: t.square(x),
    "softplus": lambda t, x: t.softplus(x),
    "clip": lambda t, x: t.clip(x, -0.7, 0.7),
    "scale": lambda t, x: t.scale(x, -2.5),
    "logsumexp_last_axis": lambda t, x: t.logsumexp_last_axis(x),
    "slice_last_axis": lambda t, x: t.slice_last_axis(x, 1, 3),
    "reshape": lambda t, x: t.reshape(x, (12,)),
    "sum": lambda t, x: t.sum(x, axis=0),
    "mean": lambda t, x: t.mean(x, axis=1),
}
BINARY = {
    "add": (lambda t, a, b: t.add(a, b), (4, 3), (4, 3)),
    "subtract": (lambda t, a, b: t.subtract(a, b), (4, 3), (4, 3)),
    "multiply": (lambda t, a, b: t.multiply(a, b), (4, 3), (4, 3)),
    "matmul": (lambda t, a, b: t.matmul(a, b), (4, 3), (3, 2)),
    "concat_last_axis": (lambda t, a, b: t.concat_last_axis(a, b), (4, 3), (4, 2)),
    "broadcast_add_bias": (lambda t, a, b: t.broadcast_add_bias(a, b), (4, 3), (3,)),
}


def _weighted_sum(t, y, w):
    return t.sum(y * t.constant(w))


def _away_from_kinks(x):
    x = x.copy()
    x[np.abs(x) < 0.05] += 0.1
    x[np.abs(np.abs(x) - 0.7) < 0.05] += 0.1
    return x


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients_at_ten_points(name):
    op = UNARY[name]
    for seed in range(10):
        rng = np.random.default_rng(seed)
        x = _away_from_kinks(rng.standard_normal((4, 3)))
        probe = Tape()
        w = rng.standard_normal(op(probe, probe.constant(x)).shape)
        err = gradient_check(lambda t, v: _weighted_sum(t, op(t, v), w), x)
        assert err < 1e-4, (name, seed, err)


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_gradients_at_ten_points(name):
    op, sa, sb = BINARY[name]
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        a, b = rng.standard_normal(sa), rng.standard_normal(sb)
        probe = Tape()
        w = rng.standard_normal(op(probe, probe.constant(a), probe.constant(b)).shape)
        err = gradient_check(lambda t, u, v: _weighted_sum(t, op(t, u, v), w), [a, b])
        assert err < 1e-4, (name, seed, err)


def test_affine_gradients_at_ten_points():
    for seed in range(10):
        rng = np.random.default_rng(200 + seed)
        x, w, b = rng.standard_normal((4, 3)), rng.standard_normal((3, 2)), rng.standard_normal(2)
        c = rng.standard_normal((4, 2))
        err = gradient_check(lambda t, u, v, s: _weighted_sum(t, t.affine(u, v, s), c), [x, w, b])
        assert err < 1e-4, (seed, err)


def test_affine_matches_matmul_then_bias_bitwise():
    rng = np.random.default_rng(5)
    x, w, b = rng.standard_normal((6, 4)), rng.standard_normal((4, 3)), rng.standard_normal(3)

    def fused(t, u, v, s):
        return t.mean(t.square(t.affine(u, v, s)))

    def split(t, u, v, s):
        return t.mean(t.square(t.broadcast_add_bias(t.matmul(u, v), s)))

    out_a, grads_a = _grad(fused, x, w, b)
    out_b, grads_b = _grad(split, x, w, b)
    assert out_a.numpy().tobytes() == out_b.numpy().tobytes()
    for u, v in zip(grads_a, grads_b):
        assert u.tobytes() == v.tobytes()


def test_affine_rejects_bias_mismatch():
    tape = Tape()
    with pytest.raises(ShapeError):
        tape.affine(tape.constant(np.ones((2, 3))), tape.constant(np.ones((3, 4))), tape.constant(np.ones(3)))


def test_every_registered_op_is_gradient_checked():
    assert set(OPS) <= set(UNARY) | set(BINARY) | {"affine"}


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 2), elements=finite))
def test_softplus_minus_softplus_of_negation_is_identity(x):
    tape = Tape()
    v = tape.constant(x)
    diff = tape.softplus(v) - tape.softplus(tape.negate(v))
    np.testing.assert_allclose(diff.numpy(), x, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 3), elements=finite))
def test_forward_outputs_are_finite(x):
    tape = Tape()
    v = tape.constant(x)
    for fn in UNARY.values():
        assert np.all(np.isfinite(fn(tape, v).numpy()))
