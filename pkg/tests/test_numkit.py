import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ctrn import numkit as nk
from ctrn.errors import ShapeError, StateError

from conftest import FD_TOL, numeric_grad, rel_error


def test_conv_zero_bank_gives_zeros():
    out, _ = nk.conv1d(np.zeros((3, 2)), nk.ConvBank.zeros(2, 4, 2))
    np.testing.assert_array_equal(out, np.zeros((3, 4)))


def test_conv_identity_kernel():
    x = np.random.default_rng(0).normal(size=(5, 3))
    bank = nk.ConvBank(np.eye(3)[None], np.zeros(3))
    out, _ = nk.conv1d(x, bank)
    np.testing.assert_array_equal(out, x)


def test_conv_hand_example():
    bank = nk.ConvBank(np.ones((2, 1, 1)), None)
    out, _ = nk.conv1d(np.array([[1.0], [2.0], [3.0]]), bank)
    np.testing.assert_array_equal(out.ravel(), [1.0, 3.0, 5.0])


def test_conv_tap_order():
    # weights[k-1] multiplies the current step, weights[0] the oldest
    bank = nk.ConvBank(np.array([[[10.0]], [[1.0]]]))
    out, _ = nk.conv1d(np.array([[1.0], [2.0], [3.0]]), bank)
    np.testing.assert_array_equal(out.ravel(), [1.0, 12.0, 23.0])


def test_conv_shape_errors():
    with pytest.raises(ShapeError):
        nk.conv1d(np.zeros((3, 2)), nk.ConvBank.zeros(2, 4, 5))
    with pytest.raises(ShapeError):
        nk.conv1d(np.zeros((0, 2)), nk.ConvBank.zeros(2, 4, 2))
    with pytest.raises(ShapeError):
        nk.ConvBank(np.zeros((2, 3)))


@pytest.mark.parametrize("seed", range(5))
def test_conv_is_causal(seed):
    rng = np.random.default_rng(seed)
    L, t = 7, int(rng.integers(0, 6))
    x = rng.normal(size=(L, 3))
    bank = nk.ConvBank(rng.normal(size=(3, 4, 3)), rng.normal(size=4))
    full, _ = nk.conv1d(x, bank)
    x2 = x.copy()
    x2[t + 1:] = 0.0
    cut, _ = nk.conv1d(x2, bank)
    np.testing.assert_array_equal(full[:t + 1], cut[:t + 1])


def test_activation_values():
    assert nk.sigmoid(np.array(0.0)) == 0.5
    assert nk.tanh(np.array(0.0)) == 0.0
    assert nk.sigmoid(np.array(np.log(3.0))) == pytest.approx(0.75, abs=1e-15)
    assert nk.sigmoid_backward(nk.sigmoid(np.array(0.0)), 1.0) == 0.25
    assert nk.tanh_backward(nk.tanh(np.array(0.0)), 1.0) == 1.0


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-30, 30)))
def test_activation_ranges(x):
    s = nk.sigmoid(x)
    t = nk.tanh(x / 2)  # |x/2| <= 15 keeps tanh below 1 in float64
    assert np.all((s > 0) & (s < 1))
    assert np.all((t > -1) & (t < 1))


def test_sigmoid_no_overflow():
    with np.errstate(over="raise"):
        s = nk.sigmoid(np.array([-1000.0, 1000.0]))
    np.testing.assert_array_equal(s, [0.0, 1.0])


def test_plumbing_ops():
    a = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(nk.matmul(a, np.eye(3)), a)
    np.testing.assert_array_equal(nk.hadamard([1, -1], [-1, -1]), [-1, 1])
    np.testing.assert_array_equal(nk.concat([1.0], [2.0, 3.0]), [1, 2, 3])
    np.testing.assert_array_equal(nk.add([1, 2], [3, 4]), [4, 6])
    np.testing.assert_array_equal(nk.sub([1, 2], [3, 4]), [-2, -2])
    np.testing.assert_array_equal(nk.scale([1, 2], 2), [2, 4])
    with pytest.raises(ShapeError):
        nk.hadamard([1, 2], [1, 2, 3])
    with pytest.raises(ShapeError):
        nk.matmul(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        nk.as_tensor(np.zeros((1, 1, 1, 1)))


def test_backward_without_record():
    with pytest.raises(StateError):
        nk.conv1d_backward(None, np.zeros((2, 2)))
    with pytest.raises(StateError):
        nk.dense_backward(None, np.zeros((2, 2)))
    with pytest.raises(StateError):
        nk.Tape()["missing"]


@pytest.mark.parametrize("seed", range(20))
def test_conv_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    k, d, m = (int(v) for v in rng.integers(1, 4, 3))
    L = int(rng.integers(1, 6))
    shape = (L, m) if seed % 2 else (2, L, m)
    x = rng.normal(size=shape)
    bank = nk.ConvBank(rng.normal(size=(k, d, m)), rng.normal(size=d))
    R = rng.normal(size=shape[:-1] + (d,))

    def f():
        return float(np.sum(nk.conv1d(x, bank)[0] * R))

    _, rec = nk.conv1d(x, bank)
    gx, gbank = nk.conv1d_backward(rec, R)
    assert rel_error(gx, numeric_grad(f, x)) < FD_TOL
    assert rel_error(gbank.weights, numeric_grad(f, bank.weights)) < FD_TOL
    assert rel_error(gbank.bias, numeric_grad(f, bank.bias)) < FD_TOL


def test_conv_weight_grad_random_4x3():
    rng = np.random.default_rng(42)
    x = rng.normal(size=(4, 3))
    bank = nk.ConvBank(rng.normal(size=(2, 2, 3)), np.zeros(2))
    R = rng.normal(size=(4, 2))
    _, rec = nk.conv1d(x, bank)
    _, gbank = nk.conv1d_backward(rec, R)
    num = numeric_grad(lambda: float(np.sum(nk.conv1d(x, bank)[0] * R)), bank.weights)
    assert rel_error(gbank.weights, num) < FD_TOL


@pytest.mark.parametrize("seed", range(20))
def test_dense_and_activation_backward(seed):
    rng = np.random.default_rng(seed)
    n, p = (int(v) for v in rng.integers(1, 5, 2))
    x = rng.normal(size=(3, n))
    W = rng.normal(size=(n, p))
    b = rng.normal(size=p)
    R = rng.normal(size=(3, p))

    def f():
        out, _ = nk.dense(x, W, b)
        return float(np.sum(nk.tanh(nk.sigmoid(out)) * R))

    out, rec = nk.dense(x, W, b)
    s = nk.sigmoid(out)
    t = nk.tanh(s)
    g = nk.sigmoid_backward(s, nk.tanh_backward(t, R))
    gx, gW, gb = nk.dense_backward(rec, g)
    for analytic, arr in ((gx, x), (gW, W), (gb, b)):
        assert rel_error(analytic, numeric_grad(f, arr)) < FD_TOL


def test_ops_deterministic():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 9, 4))
    bank = nk.ConvBank(rng.normal(size=(2, 5, 4)), rng.normal(size=5))
    a, _ = nk.conv1d(x, bank)
    b, _ = nk.conv1d(x.copy(), bank)
    assert a.tobytes() == b.tobytes()


def test_glorot_bounds():
    w = nk.glorot_uniform(np.random.default_rng(0), (50, 60), 50, 60)
    assert np.all(np.abs(w) <= np.sqrt(6 / 110))
