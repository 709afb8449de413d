import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from coattqa import tensor as T
from coattqa.tensor import ShapeError, Tensor, grad_check


def test_matmul_identity_left():
    A = Tensor([[0.3, -1.2], [2.5, 4.0]])
    assert np.array_equal(T.matmul(Tensor(np.eye(2)), A).data, A.data)


def test_matmul_identity_right():
    out = T.matmul(Tensor([[1, 2], [3, 4]]), Tensor([[1, 0], [0, 1]]))
    assert out.data.tolist() == [[1, 2], [3, 4]]


def test_matmul_matches_triple_loop(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, oracles.matmul(a.tolist(), b.tolist()),
                               rtol=0, atol=1e-12)


def test_matmul_shape_error():
    with pytest.raises(ShapeError, match="inner extents"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_batch_broadcast(rng):
    a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 5))
    out = T.matmul(Tensor(a), Tensor(b)).data
    for i in range(2):
        np.testing.assert_allclose(out[i], oracles.matmul(a[i].tolist(), b.tolist()), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(m=st.integers(1, 4), k=st.integers(1, 4), n=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_matmul_property_against_loops(m, k, n, seed):
    r = np.random.default_rng(seed)
    a, b = r.uniform(-3, 3, (m, k)), r.uniform(-3, 3, (k, n))
    np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, oracles.matmul(a.tolist(), b.tolist()),
                               rtol=0, atol=1e-12)


def test_masked_softmax_single_element():
    assert T.masked_softmax(Tensor([5.0]), [1]).data.tolist() == [1.0]


def test_masked_softmax_uniform():
    np.testing.assert_allclose(T.masked_softmax(Tensor([0.0, 0.0, 0.0]), [1, 1, 1]).data, [1 / 3] * 3)


def test_masked_softmax_direct_exp_sum():
    got = T.masked_softmax(Tensor([1.0, 2.0, 3.0]), [1, 0, 1], 1.0).data
    e1, e3 = math.exp(1.0), math.exp(3.0)
    np.testing.assert_allclose(got, [e1 / (e1 + e3), 0.0, e3 / (e1 + e3)], rtol=0, atol=1e-15)
    assert got[1] == 0.0


def test_masked_softmax_temperature(rng):
    x = rng.standard_normal(6)
    mask = [1, 1, 0, 1, 0, 1]
    np.testing.assert_allclose(T.masked_softmax(Tensor(x), mask, 2.5).data,
                               oracles.masked_softmax(x.tolist(), mask, 2.5), atol=1e-15)


def test_masked_softmax_rejects_empty_row():
    with pytest.raises(ValueError, match="all-zero mask"):
        T.masked_softmax(Tensor([[1.0, 2.0], [3.0, 4.0]]), [[1, 0], [0, 0]])


def test_masked_softmax_stable_for_large_inputs():
    out = T.masked_softmax(Tensor([1000.0, 1001.0]), [1, 1]).data
    assert np.isfinite(out).all()
    np.testing.assert_allclose(out.sum(), 1.0)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), L=st.integers(1, 9))
def test_masked_softmax_row_law(seed, L):
    r = np.random.default_rng(seed)
    x = r.uniform(-50, 50, (3, L))
    mask = r.random((3, L)) < 0.5
    mask[:, r.integers(0, L)] = True
    p = T.masked_softmax(Tensor(x), mask).data
    assert np.all(p[~mask] == 0.0)
    assert np.all(np.abs(p.sum(axis=-1) - 1.0) <= 1e-9)


def test_layer_norm_constant_row():
    out = T.layer_norm(Tensor([[2.0, 2.0, 2.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3))).data
    assert np.array_equal(out, np.zeros((1, 3)))


def test_layer_norm_already_normalised():
    out = T.layer_norm(Tensor([1.0, -1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-14).data
    np.testing.assert_allclose(out, [1.0, -1.0], atol=1e-12)


def test_layer_norm_moments(rng):
    row = rng.standard_normal(7) * 3 + 1
    out = T.layer_norm(Tensor(row), Tensor(np.ones(7)), Tensor(np.zeros(7)), eps=1e-12).data
    mu, var = oracles.layer_norm_stats(out.tolist())
    assert abs(mu) < 1e-12
    assert abs(var - 1.0) < 1e-9


def test_layer_norm_affine_applied_last(rng):
    row = rng.standard_normal(5)
    gamma, beta = rng.standard_normal(5), rng.standard_normal(5)
    plain = T.layer_norm(Tensor(row), Tensor(np.ones(5)), Tensor(np.zeros(5))).data
    affine = T.layer_norm(Tensor(row), Tensor(gamma), Tensor(beta)).data
    np.testing.assert_allclose(affine, plain * gamma + beta, atol=1e-14)


def test_conv1d_pointwise_identity(rng):
    x = rng.standard_normal((6, 3))
    kernels = np.eye(3)[:, :, None]
    out = T.conv1d(Tensor(x), Tensor(kernels), Tensor(np.zeros(3))).data
    np.testing.assert_array_equal(out, x)


def test_conv1d_zero_input_gives_bias():
    out = T.conv1d(Tensor(np.zeros((4, 2))), Tensor(np.ones((3, 2, 3))), Tensor([1.0, -2.0, 0.5])).data
    np.testing.assert_array_equal(out, np.tile([1.0, -2.0, 0.5], (4, 1)))


def test_conv1d_matches_sliding_window(rng):
    x, k, b = rng.standard_normal((5, 2)), rng.standard_normal((3, 2, 3)), rng.standard_normal(3)
    out = T.conv1d(Tensor(x), Tensor(k), Tensor(b)).data
    assert out.shape == (5, 3)
    np.testing.assert_allclose(out, oracles.conv1d(x.tolist(), k.tolist(), b.tolist()), rtol=0, atol=1e-12)


def test_conv1d_rejects_even_kernel():
    with pytest.raises(ValueError, match="odd"):
        T.conv1d(Tensor(np.ones((4, 2))), Tensor(np.ones((1, 2, 2))), Tensor(np.zeros(1)))


@settings(max_examples=100, deadline=None)
@given(L=st.integers(1, 7), c_in=st.integers(1, 3), c_out=st.integers(1, 3), half=st.integers(0, 2),
       seed=st.integers(0, 2**32 - 1))
def test_conv1d_property_against_loops(L, c_in, c_out, half, seed):
    r = np.random.default_rng(seed)
    k = 2 * half + 1
    x, w, b = r.standard_normal((L, c_in)), r.standard_normal((c_out, c_in, k)), r.standard_normal(c_out)
    np.testing.assert_allclose(T.conv1d(Tensor(x), Tensor(w), Tensor(b)).data,
                               oracles.conv1d(x.tolist(), w.tolist(), b.tolist()), rtol=0, atol=1e-12)


def test_lstm_zero_weights_give_zero_states(rng):
    x = rng.standard_normal((4, 3))
    out = T.lstm_sequence(Tensor(x), Tensor(np.zeros((8, 3))), Tensor(np.zeros((8, 2))), Tensor(np.zeros(8))).data
    np.testing.assert_array_equal(out, np.zeros((4, 2)))


def test_lstm_single_step_matches_gate_oracle(rng):
    x = rng.standard_normal((1, 3))
    w_ih, w_hh, b = rng.standard_normal((8, 3)), rng.standard_normal((8, 2)), rng.standard_normal(8)
    out = T.lstm_sequence(Tensor(x), Tensor(w_ih), Tensor(w_hh), Tensor(b)).data
    np.testing.assert_allclose(out, oracles.lstm(x.tolist(), w_ih.tolist(), w_hh.tolist(), b.tolist()),
                               rtol=0, atol=1e-12)


def test_lstm_unrolled_matches_oracle(rng):
    x = rng.standard_normal((3, 4))
    w_ih, w_hh, b = 0.3 * rng.standard_normal((12, 4)), 0.3 * rng.standard_normal((12, 3)), 0.3 * rng.standard_normal(12)
    out = T.lstm_sequence(Tensor(x), Tensor(w_ih), Tensor(w_hh), Tensor(b)).data
    np.testing.assert_allclose(out, oracles.lstm(x.tolist(), w_ih.tolist(), w_hh.tolist(), b.tolist()),
                               rtol=0, atol=1e-10)


def test_lstm_batch_rows_are_independent(rng):
    x = rng.standard_normal((2, 4, 3))
    params = [Tensor(0.4 * rng.standard_normal(s)) for s in [(8, 3), (8, 2), (8,)]]
    batched = T.lstm_sequence(Tensor(x), *params).data
    for i in range(2):
        np.testing.assert_allclose(batched[i], T.lstm_sequence(Tensor(x[i]), *params).data, atol=1e-15)


def test_cross_entropy_two_way_uniform():
    assert T.cross_entropy(Tensor([0.0, 0.0]), np.array(0)).item() == pytest.approx(math.log(2), abs=1e-15)


def test_cross_entropy_matches_log_softmax(rng):
    logits = rng.standard_normal((3, 5))
    target = np.array([4, 0, 2])
    got = T.cross_entropy(Tensor(logits), target).data
    want = [-oracles.log_softmax(row)[t] for row, t in zip(logits.tolist(), target)]
    np.testing.assert_allclose(got, want, atol=1e-13)


def test_cross_entropy_rejects_out_of_range():
    with pytest.raises(IndexError):
        T.cross_entropy(Tensor([0.0, 1.0]), np.array(2))


def test_cross_entropy_rejects_masked_target():
    with pytest.raises(ValueError, match="masked"):
        T.cross_entropy(Tensor([0.0, 1.0, 2.0]), np.array(2), [1, 1, 0])


def test_relu_values():
    assert T.relu(Tensor([-1.0, 2.0])).data.tolist() == [0.0, 2.0]


@pytest.mark.parametrize("x0", [-2.0, 0.0, 1.0])
def test_gelu_gradient_matches_finite_difference(x0):
    x = Tensor([x0], requires_grad=True)
    T.gelu(x).backward(np.ones(1))
    h = 1e-6
    f = lambda v: T.gelu(Tensor([v])).item()  # noqa: E731
    numeric = (f(x0 + h) - f(x0 - h)) / (2 * h)
    assert abs(x.grad[0] - numeric) / max(abs(numeric), 1e-12) <= 1e-5


def test_linear_values(rng):
    x, W, b = rng.standard_normal((4, 3)), rng.standard_normal((2, 3)), rng.standard_normal(2)
    out = T.linear(Tensor(x), Tensor(W), Tensor(b)).data
    want = [[sum(x[i, k] * W[o, k] for k in range(3)) + b[o] for o in range(2)] for i in range(4)]
    np.testing.assert_allclose(out, want, atol=1e-13)


def test_concat_and_split_gradient(rng):
    a, b = Tensor(rng.standard_normal((2, 2)), True), Tensor(rng.standard_normal((2, 3)), True)
    out = T.concat([a, b], axis=-1)
    g = rng.standard_normal((2, 5))
    out.backward(g)
    np.testing.assert_array_equal(a.grad, g[:, :2])
    np.testing.assert_array_equal(b.grad, g[:, 2:])


def test_gradient_accumulates_over_shared_use():
    x = Tensor([3.0], requires_grad=True)
    y = x * x + x
    y.backward(np.ones(1))
    assert x.grad.tolist() == [7.0]


def test_grad_check_linear_layer(rng):
    x, W, b = (Tensor(rng.standard_normal(s)) for s in [(4, 3), (2, 3), (2,)])
    assert grad_check(lambda: T.linear(x, W, b), [x, W, b]) <= 1e-5


def test_grad_check_lstm_three_steps(rng):
    x = Tensor(rng.standard_normal((3, 2)))
    params = [Tensor(0.5 * rng.standard_normal(s)) for s in [(8, 2), (8, 2), (8,)]]
    assert grad_check(lambda: T.lstm_sequence(x, *params), [x, *params]) <= 1e-4


def test_grad_check_detects_wrong_gradient(rng):
    x = Tensor(rng.standard_normal(4))

    def broken():
        return T._node(x.data ** 2, (x,), lambda g: x._accum(g * x.data))  # should be 2x

    assert grad_check(broken, [x]) > 0.1


def test_grad_check_rejects_bad_epsilon():
    x = Tensor([1.0])
    with pytest.raises(ValueError):
        grad_check(lambda: T.relu(x), [x], epsilon=1e-2)


def test_primitive_suite_within_tolerance():
    from coattqa.gradcheck import run_suite

    for r in run_suite(variants=()):
        assert r.max_rel_error <= 1e-5, r


def test_forward_is_bit_identical_across_runs(rng):
    x = rng.standard_normal((3, 5, 4))
    k = rng.standard_normal((4, 4, 3))

    def run():
        h = T.conv1d(Tensor(x), Tensor(k), Tensor(np.zeros(4)))
        return T.masked_softmax(T.matmul(h, T.swap_last(h)), np.ones(5)).data

    assert run().tobytes() == run().tobytes()


def test_no_grad_records_nothing():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with T.no_grad():
        y = T.relu(x)
    assert not y.requires_grad and y._backward is None
