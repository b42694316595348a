import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from plugs import tensor as T
from plugs.gradcheck import NondeterminismError, gradient_check
from plugs.tensor import DimensionError, NumericError, Tape, TapeError, Tensor, UndefinedLossError


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(2)), a).data, a.data)


def test_matmul_hand_case():
    out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0, 6.0], [7.0, 8.0]]))
    np.testing.assert_array_equal(out.data, [[19, 22], [43, 50]])


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_softmax_uniform():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_softmax_large_logits_do_not_overflow():
    out = T.softmax(Tensor([1000.0, 0.0], dtype=np.float64)).data
    assert np.all(np.isfinite(out))
    assert out[0] == pytest.approx(1.0, abs=1e-15)
    assert out[1] == pytest.approx(math.exp(-1000), abs=1e-300)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 7), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    s = T.softmax(Tensor(x, dtype=np.float64)).data.sum(axis=-1)
    np.testing.assert_allclose(s, 1.0, atol=1e-12)


def test_layer_norm_constant_is_zero():
    out = T.layer_norm(Tensor(np.full((2, 5), 3.0)), Tensor(np.ones(5)), Tensor(np.zeros(5)))
    np.testing.assert_array_equal(out.data, 0.0)


def test_layer_norm_hand_case():
    out = T.layer_norm(Tensor([1.0, 2.0, 3.0], dtype=np.float64), eps=0.0)
    np.testing.assert_allclose(out.data, [-1.2247, 0.0, 1.2247], atol=1e-3)


def test_cross_entropy_uniform_is_log_v():
    loss = T.cross_entropy(Tensor(np.zeros((3, 4))), [0, 1, 2])
    assert loss.item() == pytest.approx(math.log(4), abs=1e-6)


def test_cross_entropy_hand_case():
    loss = T.cross_entropy(Tensor([[2.0, 0.0]], dtype=np.float64), [0])
    assert loss.item() == pytest.approx(math.log(1 + math.exp(-2)), abs=1e-12)
    assert loss.item() == pytest.approx(0.1269, abs=1e-4)


def test_cross_entropy_confident_goes_to_zero():
    logits = np.full((2, 5), -1e3)
    logits[[0, 1], [3, 1]] = 1e3
    assert T.cross_entropy(Tensor(logits, dtype=np.float64), [3, 1]).item() < 1e-12


def test_cross_entropy_ignores_pad_positions():
    logits = Tensor(np.array([[2.0, 0.0], [0.0, 9.0]]), dtype=np.float64)
    loss = T.cross_entropy(logits, [0, 0], pad_mask=np.array([False, True]))
    assert loss.item() == pytest.approx(math.log(1 + math.exp(-2)))


def test_cross_entropy_all_pad():
    with pytest.raises(UndefinedLossError):
        T.cross_entropy(Tensor(np.zeros((2, 3))), [0, 0], pad_mask=np.array([True, True]))


def test_square_gradient():
    x = Tensor(3.0, requires_grad=True, dtype=np.float64)
    with Tape() as tape:
        y = x * x
    grads = tape.backward(y)
    assert grads[x] == pytest.approx(6.0)
    assert x.grad == pytest.approx(6.0)


def test_second_backward_on_consumed_tape():
    x = Tensor(2.0, requires_grad=True)
    with Tape() as tape:
        y = x * x
    tape.backward(y)
    with pytest.raises(TapeError):
        tape.backward(y)


def test_shared_leaf_accumulates():
    x = Tensor([1.0, -2.0], requires_grad=True, dtype=np.float64)
    with Tape() as tape:
        y = T.tsum(x * x + x * 3.0)
    tape.backward(y)
    np.testing.assert_allclose(x.grad, 2 * x.data + 3.0)


def test_nonfinite_forward_raises():
    with pytest.raises(NumericError):
        T.log(Tensor([0.0, 1.0]))


def test_gradcheck_quadratic():
    rng = np.random.default_rng(0)
    w = Tensor(rng.standard_normal((3, 4)), dtype=np.float64)
    a = rng.standard_normal((3, 4))
    rep = gradient_check(lambda: T.tsum(w * w * Tensor(a, dtype=np.float64)), {"w": w})
    assert rep.max_rel_error < 1e-8


def test_gradcheck_two_layer_net():
    rng = np.random.default_rng(3)
    x = Tensor(rng.standard_normal((5, 4)), dtype=np.float64)
    w1 = Tensor(rng.standard_normal((4, 6)) * 0.5, dtype=np.float64)
    b1 = Tensor(rng.standard_normal(6) * 0.1, dtype=np.float64)
    w2 = Tensor(rng.standard_normal((6, 3)) * 0.5, dtype=np.float64)
    g = Tensor(np.ones(6), dtype=np.float64)
    bt = Tensor(np.zeros(6), dtype=np.float64)
    targets = [0, 2, 1, 1, 0]

    def f():
        h = T.relu(T.layer_norm(T.matmul(x, w1) + b1, g, bt))
        return T.cross_entropy(T.matmul(h, w2), targets)

    rep = gradient_check(f, {"w1": w1, "b1": b1, "w2": w2, "g": g, "bt": bt})
    assert rep.passed, rep.per_param


def test_gradcheck_rejects_dropout():
    rng = np.random.default_rng(0)
    w = Tensor(rng.standard_normal((4, 4)), dtype=np.float64)
    with pytest.raises(NondeterminismError):
        gradient_check(lambda: T.tsum(T.dropout(w, 0.5, rng)), {"w": w})


def test_gradcheck_shrinks_step_near_relu_kink():
    w = Tensor(np.array([3e-6, -2.0, 1.0]), dtype=np.float64)
    rep = gradient_check(lambda: T.tsum(T.relu(w) * 2.0), {"w": w})
    assert rep.n_shrunk == 1 and rep.n_skipped == 0
    assert rep.max_rel_error < 1e-8


def test_gradcheck_skips_exact_kink():
    w = Tensor(np.array([0.0, 1.0]), dtype=np.float64)
    rep = gradient_check(lambda: T.tsum(T.relu(w)), {"w": w})
    assert rep.n_skipped == 1 and rep.n_checked == 1
    assert rep.passed


def test_cross_entropy_gradient_is_p_minus_onehot():
    z = np.array([[0.3, -1.2, 2.0, 0.1], [1.0, 1.0, -0.5, 0.0]])
    logits = Tensor(z, requires_grad=True, dtype=np.float64)
    with Tape() as tape:
        loss = T.cross_entropy(logits, [2, 0])
    tape.backward(loss)
    p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    p[[0, 1], [2, 0]] -= 1.0
    np.testing.assert_allclose(logits.grad, p / 2, atol=1e-12)
