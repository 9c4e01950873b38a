from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kigan import tensor as T
from kigan.errors import DimensionError, EmptyInputError, NonFiniteError
from kigan.gradcheck import grad_check
from kigan.tensor import GradTape, Tensor, no_grad


def param(x):
    return Tensor(np.asarray(x, dtype=float), requires_grad=True)


def test_tensor_stores_float64_and_rejects_nonfinite():
    t = Tensor([1, 2, 3])
    assert t.data.dtype == np.float64 and t.shape == (3,)
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])
    with pytest.raises(NonFiniteError):
        Tensor([np.inf])


def test_elementwise_mul_and_add_identity():
    assert np.array_equal(T.elementwise("mul", Tensor([1, 2, 3]), Tensor([4, 5, 6])).data, [4, 10, 18])
    x = Tensor([0.5, -1.5])
    assert np.array_equal(T.elementwise("add", x, 0).data, x.data)


def test_elementwise_shape_mismatch():
    with pytest.raises(DimensionError):
        T.elementwise("add", Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))


def test_elementwise_overflow_is_nonfinite_error_naming_op():
    with pytest.raises(NonFiniteError, match="exp"):
        T.elementwise("exp", Tensor([1000.0]))
    with pytest.raises(NonFiniteError, match="log"):
        T.elementwise("log", Tensor([0.0]))


def test_tanh_derivative_matches_closed_form_and_finite_difference():
    x = param([0.5])
    with GradTape() as tape:
        y = T.tsum(x.tanh())
    tape.backward(y)
    assert x.grad[0] == pytest.approx(0.786448, abs=1e-6)
    assert grad_check(lambda a: T.tsum(a.tanh()), param([0.5])) < 1e-6


def test_matmul_values_identity_and_mismatch():
    c = T.matmul(Tensor([[1, 2], [3, 4]]), Tensor([[5], [6]]))
    assert np.array_equal(c.data, [[17], [39]])
    a = np.random.default_rng(0).normal(size=(3, 3))
    assert np.array_equal(T.matmul(Tensor(a), Tensor(np.eye(3))).data, a)
    with pytest.raises(DimensionError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient():
    rng = np.random.default_rng(1)
    a, b = param(rng.normal(size=(3, 4))), param(rng.normal(size=(4, 2)))
    assert grad_check(lambda x, y: T.tsum(T.matmul(x, y)), [a, b]) < 1e-6
    a.grad = b.grad = None
    with GradTape() as tape:
        out = T.tsum(T.matmul(a, b))
    tape.backward(out)
    assert np.allclose(a.grad, np.ones((3, 2)) @ b.data.T)
    assert np.allclose(b.grad, a.data.T @ np.ones((3, 2)))


def test_softmax_examples():
    assert np.allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3)
    assert np.array_equal(T.softmax(Tensor([1000.0, 1000.0])).data, [0.5, 0.5])
    e = np.exp([1.0, 2.0, 3.0])
    assert np.allclose(T.softmax(Tensor([1.0, 2.0, 3.0])).data, [0.09003, 0.24473, 0.66524], atol=1e-5)
    assert np.allclose(T.softmax(Tensor([1.0, 2.0, 3.0])).data, e / e.sum(), atol=1e-15)


def test_softmax_empty_axis():
    with pytest.raises(DimensionError):
        T.softmax(Tensor(np.zeros((2, 0))), axis=1)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)),
              elements=st.floats(-1e3, 1e3)))
def test_softmax_sums_to_one(x):
    y = T.softmax(Tensor(x), axis=1).data
    assert (y >= 0).all()
    assert np.allclose(y.sum(axis=1), 1.0, atol=1e-9)


def test_max_pool_rows():
    assert np.array_equal(T.max_pool_rows(Tensor([[1, 5], [3, 2]])).data, [3, 5])
    assert np.array_equal(T.max_pool_rows(Tensor([[7.0, -1.0]])).data, [7, -1])
    with pytest.raises(EmptyInputError):
        T.max_pool_rows(Tensor(np.zeros((0, 3))))
    x = param(np.random.default_rng(2).normal(size=(4, 3)))
    assert grad_check(lambda a: T.tsum(T.elementwise("mul", T.max_pool_rows(a), Tensor([1.0, -2.0, 0.5]))), x) < 1e-6


def test_max_pool_ties_route_to_lowest_index():
    x = param([[2.0, 1.0], [2.0, 3.0]])
    with GradTape() as tape:
        y = T.tsum(T.max_pool_rows(x))
    tape.backward(y)
    assert np.array_equal(x.grad, [[1.0, 0.0], [0.0, 1.0]])


def test_embedding_lookup():
    table = param(np.eye(3))
    assert np.array_equal(T.embedding_lookup(table, 1).data, [0, 1, 0])
    assert np.array_equal(T.embedding_lookup(table, 2).data, T.embedding_lookup(table, 2).data)
    with GradTape() as tape:
        y = T.tsum(T.embedding_lookup(table, 2))
    tape.backward(y)
    assert np.array_equal(table.grad, [[0, 0, 0], [0, 0, 0], [1, 1, 1]])
    with pytest.raises(IndexError):
        T.embedding_lookup(table, 3)


def _lstm_params(d_in, d_h, rng, scale=0.5):
    return (param(rng.normal(0, scale, (d_in, 4 * d_h))), param(rng.normal(0, scale, (d_h, 4 * d_h))),
            param(rng.normal(0, scale, 4 * d_h)))


def test_lstm_zero_fixed_point():
    z = Tensor(np.zeros((1, 3)))
    h0 = Tensor(np.zeros((1, 4)))
    h, c = T.lstm_step(z, h0, h0, Tensor(np.zeros((3, 16))), Tensor(np.zeros((4, 16))), Tensor(np.zeros(16)))
    assert not h.data.any() and not c.data.any()


def test_lstm_closed_output_gate():
    rng = np.random.default_rng(3)
    wx, wh, b = _lstm_params(3, 4, rng)
    b.data[12:] = -1e4  # output gate block
    h, c = T.lstm_step(Tensor(rng.normal(size=(1, 3))), Tensor(rng.normal(size=(1, 4))),
                       Tensor(rng.normal(size=(1, 4))), wx, wh, b)
    assert np.abs(h.data).max() == 0.0
    assert np.abs(c.data).max() > 0.0


def test_lstm_full_jacobian():
    rng = np.random.default_rng(4)
    wx, wh, b = _lstm_params(3, 4, rng)
    x, h, c = param(rng.normal(size=(1, 3))), param(rng.normal(size=(1, 4))), param(rng.normal(size=(1, 4)))
    w1, w2 = rng.normal(size=(1, 4)), rng.normal(size=(1, 4))

    def f(x, h, c, wx, wh, b):
        h1, c1 = T.lstm_step(x, h, c, wx, wh, b)
        return T.tsum(h1 * Tensor(w1)) + T.tsum(c1 * Tensor(w2))

    assert grad_check(f, [x, h, c, wx, wh, b]) < 1e-5


def test_tape_is_single_use():
    x = param([1.0])
    with GradTape() as tape:
        y = T.tsum(x * x)
    tape.backward(y)
    with pytest.raises(RuntimeError):
        tape.backward(y)


def test_no_grad_records_nothing():
    x = param([1.0, 2.0])
    with GradTape() as tape:
        with no_grad():
            T.tsum(x * x)
    assert len(tape) == 0


def test_gradients_accumulate_across_uses():
    x = param([3.0])
    with GradTape() as tape:
        y = T.tsum(x * x + x)
    tape.backward(y)
    assert x.grad[0] == pytest.approx(7.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_composite_gradient_on_gaussian_inputs(seed):
    rng = np.random.default_rng(seed)
    a, b = param(rng.normal(size=(3, 4))), param(rng.normal(size=(4, 2)))

    def f(a, b):
        return T.tsum(T.softmax(T.matmul(a, b).tanh(), axis=1) * Tensor(np.arange(6.0).reshape(3, 2)))

    assert grad_check(f, [a, b]) < 1e-4


def test_ops_are_deterministic():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(5, 5))
    r1 = T.softmax(T.matmul(Tensor(a), Tensor(a)), axis=0).data
    r2 = T.softmax(T.matmul(Tensor(a), Tensor(a)), axis=0).data
    assert r1.tobytes() == r2.tobytes()


def test_segment_ops_match_dense_reference():
    x = np.random.default_rng(6).normal(size=(5, 3))
    seg = np.array([0, 0, 1, 1, 1])
    s = T.segment_softmax(Tensor(x), seg, 2).data
    for k in (0, 1):
        assert np.allclose(s[seg == k], T.softmax(Tensor(x[seg == k]), axis=0).data)
    m = T.segment_max(Tensor(x), seg, 3).data
    assert np.allclose(m[0], x[:2].max(0)) and np.allclose(m[1], x[2:].max(0))
    assert np.array_equal(m[2], np.zeros(3))  # empty segment
    assert np.allclose(T.segment_sum(Tensor(x), seg, 2).data[1], x[2:].sum(0))
