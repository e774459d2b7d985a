import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cgap.autodiff import Adam, NonFiniteError, ShapeError, Tape, finite_difference_check, relative_error

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def matrices(max_side=4):
    shape = st.tuples(st.integers(1, max_side), st.integers(1, max_side))
    return shape.flatmap(lambda s: arrays(np.float64, s, elements=finite))


def test_matmul_identity():
    t = Tape()
    out = t.const(np.eye(2)) @ t.const([[3, 4], [5, 6]])
    np.testing.assert_array_equal(out.value, [[3, 4], [5, 6]])


def test_relu_forward():
    t = Tape()
    np.testing.assert_array_equal(t.const([[-1, 2]]).relu().value, [[0, 2]])


def test_softmax_of_constant_row_is_uniform():
    t = Tape()
    np.testing.assert_allclose(t.const([[0, 0, 0]]).row_softmax().value, [[1 / 3] * 3], rtol=0, atol=1e-15)


def test_grad_of_sum_is_ones():
    t = Tape()
    w = t.param("W", np.arange(4.0).reshape(2, 2))
    g = t.backward(w.sum())
    np.testing.assert_array_equal(g["W"], np.ones((2, 2)))


def test_relu_subgradient():
    t = Tape()
    w = t.param("W", [[-1.0, 2.0]])
    np.testing.assert_array_equal(t.backward(w.relu().sum())["W"], [[0, 1]])


def test_relu_subgradient_at_zero_is_zero():
    t = Tape()
    w = t.param("W", [[0.0]])
    assert t.backward(w.relu().sum())["W"][0, 0] == 0.0


def test_squared_difference_grad():
    t = Tape()
    w = t.param("W", [[1.0]])
    assert t.backward(w.sqdiff([[3.0]]).sum())["W"][0, 0] == -4.0


def test_unused_param_gets_zero_grad():
    t = Tape()
    a = t.param("a", [[1.0]])
    t.param("b", [[2.0, 3.0]])
    g = t.backward(a.exp().sum())
    np.testing.assert_array_equal(g["b"], np.zeros((1, 2)))


def test_backward_rejects_non_scalar():
    t = Tape()
    w = t.param("W", np.ones((2, 2)))
    with pytest.raises(ShapeError):
        t.backward(w.relu())


def test_shape_error_names_op_and_shapes():
    t = Tape()
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        t.const(np.ones((2, 3))) @ t.const(np.ones((2, 3)))
    with pytest.raises(ShapeError, match="add"):
        t.const(np.ones((2, 3))) + t.const(np.ones((3, 2)))


def test_non_finite_output_raises():
    t = Tape()
    with pytest.raises(NonFiniteError, match="exp"):
        t.const([[1000.0]]).exp()


def test_log_is_guarded():
    t = Tape()
    assert np.isfinite(t.const([[0.0]]).log().value[0, 0])


def test_masked_softmax_zeros_masked_entries():
    t = Tape()
    y = t.const([[1.0, 5.0, 2.0]]).row_softmax(mask=[[True, False, True]]).value
    assert y[0, 1] == 0.0
    np.testing.assert_allclose(y[0, [0, 2]], np.exp([1, 2]) / np.exp([1, 2]).sum())


def test_adam_first_step_moves_by_lr():
    p = {"w": np.array([[0.5]])}
    Adam(lr=1e-3).step(p, {"w": np.array([[1.0]])})
    np.testing.assert_allclose(p["w"], [[0.5 - 1e-3]], atol=1e-10)


def test_adam_missing_gradient():
    with pytest.raises(KeyError, match="missing"):
        Adam().step({"a": np.zeros((1, 1)), "b": np.zeros((1, 1))}, {"a": np.zeros((1, 1))})


def test_adam_deterministic(rng):
    start = rng.normal(size=(3, 2))
    grads = [rng.normal(size=(3, 2)) for _ in range(5)]
    runs = []
    for _ in range(2):
        p, opt = {"w": start.copy()}, Adam()
        for g in grads:
            opt.step(p, {"w": g})
        runs.append(p["w"])
    assert runs[0].tobytes() == runs[1].tobytes()


@given(matrices())
def test_adam_zero_gradient_is_fixed_point(w):
    p = {"w": w.copy()}
    opt = Adam()
    for _ in range(3):
        opt.step(p, {"w": np.zeros_like(w)})
    assert p["w"].tobytes() == w.tobytes()


@given(matrices(6))
def test_softmax_rows_sum_to_one(x):
    y = Tape().const(x).row_softmax().value
    np.testing.assert_allclose(y.sum(axis=1), 1.0, rtol=0, atol=1e-12)


@given(matrices())
def test_relu_backward_zero_where_input_nonpositive(x):
    t = Tape()
    w = t.param("w", x)
    g = t.backward(w.relu().sum())["w"]
    assert np.all(g[x <= 0] == 0)
    assert np.all(g[x > 0] == 1)


def test_fd_quadratic():
    def forward(p):
        t = Tape()
        w = t.param("w", p["w"])
        return w.sqdiff([[1.5]]).sum().scale(3.0)

    worst, _ = finite_difference_check(forward, {"w": np.array([[0.2]])})
    assert worst < 1e-6


def test_fd_constant_loss():
    def forward(p):
        t = Tape()
        t.param("w", p["w"])
        return t.const([[2.0]])

    assert finite_difference_check(forward, {"w": np.ones((2, 2))})[0] == 0.0


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([0.0]))[0] == 0.0


@given(st.integers(0, 2**32 - 1))
def test_composite_expression_gradients(seed):
    r = np.random.default_rng(seed)
    params = {"a": r.normal(size=(3, 4)), "b": r.normal(size=(4, 2)), "c": r.normal(size=(1, 2))}
    target = r.normal(size=(3, 2))
    mask = np.array([[True, False], [True, True], [False, True]])

    def forward(p):
        t = Tape()
        a, b, c = (t.param(k, p[k]) for k in "abc")
        h = (a @ b).tanh() + c.tile_rows(3).sigmoid()
        s = h.row_softmax(mask=mask) * h.exp()
        d = s.sqdiff(target).sum(axis=1).add([[1.0]] * 3).sqrt()
        return (d.T @ d).scale(0.5) + h.exp().log().sum() - s.sum(axis=0).sum()

    worst, _ = finite_difference_check(forward, params)
    assert worst < 1e-6
