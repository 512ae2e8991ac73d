import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from motion_prior import tensor as tc
from motion_prior.gradcheck import cases, run_case
from motion_prior.tensor import Tensor, backward, grad_check


def sliding_dot(x, w, b, stride, pad_left, pad_right):
    """Brute-force 1-D convolution oracle over [T, Cin] inputs."""
    x = np.concatenate([np.zeros((pad_left, x.shape[1])), x, np.zeros((pad_right, x.shape[1]))])
    k = w.shape[0]
    out = []
    for s in range(0, len(x) - k + 1, stride):
        acc = b.astype(np.float64).copy()
        for i in range(k):
            for c in range(x.shape[1]):
                acc += x[s + i, c] * w[i, c]
        out.append(acc)
    return np.array(out)


def test_conv_identity_kernel():
    x = np.random.default_rng(0).standard_normal((5, 3))
    w = np.eye(3)[None]
    y = tc.conv1d_temporal(Tensor(x), Tensor(w), Tensor(np.zeros(3)))
    np.testing.assert_array_equal(y.data, x)


def test_conv_hand_valid():
    x = Tensor(np.array([[1.0], [2.0], [3.0], [4.0]]))
    w = Tensor(np.ones((2, 1, 1)))
    y = tc.conv1d_temporal(x, w, None, padding="valid")
    np.testing.assert_array_equal(y.data[:, 0], [3, 5, 7])


@pytest.mark.parametrize("T,k,stride", [(4, 3, 2), (8, 3, 2), (7, 3, 1), (9, 5, 3), (4, 1, 1), (6, 2, 2)])
def test_conv_same_matches_brute_force(T, k, stride):
    rng = np.random.default_rng(T * 31 + k)
    x, w, b = rng.standard_normal((T, 2)), rng.standard_normal((k, 2, 3)), rng.standard_normal(3)
    y = tc.conv1d_temporal(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding="same").data
    assert y.shape[0] == -(-T // stride)
    total = max((y.shape[0] - 1) * stride + k - T, 0)
    ref = sliding_dot(x, w, b, stride, total // 2, total - total // 2)
    np.testing.assert_allclose(y, ref, atol=1e-12)


@pytest.mark.parametrize("T,k,stride", [(4, 2, 1), (9, 3, 2), (10, 4, 3)])
def test_conv_valid_matches_brute_force(T, k, stride):
    rng = np.random.default_rng(T)
    x, w, b = rng.standard_normal((T, 2)), rng.standard_normal((k, 2, 1)), rng.standard_normal(1)
    y = tc.conv1d_temporal(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding="valid").data
    assert y.shape[0] == (T - k) // stride + 1
    np.testing.assert_allclose(y, sliding_dot(x, w, b, stride, 0, 0), atol=1e-12)


def test_conv_errors():
    x = Tensor(np.zeros((4, 2)))
    with pytest.raises(ValueError):
        tc.conv1d_temporal(x, Tensor(np.zeros((3, 3, 1))))
    with pytest.raises(ValueError):
        tc.conv1d_temporal(x, Tensor(np.zeros((3, 2, 1))), stride=0)
    with pytest.raises(ValueError):
        tc.conv1d_temporal(x, Tensor(np.zeros((3, 2, 1))), padding="reflect")


def test_conv_stride_shape():
    y = tc.conv1d_temporal(Tensor(np.zeros((4, 1))), Tensor(np.ones((3, 1, 1))), stride=2)
    assert y.shape == (2, 1)


def test_upsample():
    y = tc.upsample_temporal(Tensor(np.array([[1.0], [2.0]])), 2)
    np.testing.assert_array_equal(y.data[:, 0], [1, 1, 2, 2])
    x = np.arange(8.0).reshape(4, 2)
    np.testing.assert_array_equal(tc.upsample_temporal(Tensor(x), 1).data, x)
    assert tc.upsample_temporal(Tensor(x), 2).shape == (8, 2)
    with pytest.raises(ValueError):
        tc.upsample_temporal(Tensor(x), 0)


def test_upsample_adjoint_sums_slots():
    x = Tensor(np.array([[1.0], [2.0]]), requires_grad=True)
    w = np.array([[1.0], [2.0], [3.0], [4.0]])
    backward((tc.upsample_temporal(x, 2) * Tensor(w)).sum())
    np.testing.assert_array_equal(x.grad[:, 0], [3, 7])


def test_backward_linear_and_power():
    x = Tensor(np.zeros(3), requires_grad=True)
    backward(x.sum())
    np.testing.assert_array_equal(x.grad, [1, 1, 1])
    y = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    backward((y * y).sum())
    np.testing.assert_array_equal(y.grad, [2, 4])


def test_backward_accumulates():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    backward((x * 3.0).sum())
    backward((x * 3.0).sum())
    np.testing.assert_array_equal(x.grad, [6, 6])


def test_backward_errors():
    x = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(ValueError):
        backward(x * 2.0)
    with pytest.raises(ValueError):
        backward(Tensor(np.ones(2)).sum())


def test_backward_deterministic():
    rng = np.random.default_rng(3)
    fn, params = cases()["loss_hmvae"][0](rng)
    grads = []
    for _ in range(2):
        for p in params:
            p.grad = None
        backward(fn())
        grads.append([p.grad.copy() for p in params])
    for a, b in zip(*grads):
        assert np.array_equal(a, b)


def test_grad_check_quadratic():
    x = Tensor(np.array([3.0]), requires_grad=True)
    assert grad_check(lambda: (x * x).sum(), [x]) < 1e-8


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_grad_check_nonfinite():
    x = Tensor(np.array([np.nan]), requires_grad=True)
    with pytest.raises(FloatingPointError):
        grad_check(lambda: (x * x).sum(), [x])
    y = Tensor(np.array([0.0]), requires_grad=True)
    with pytest.raises(FloatingPointError):
        grad_check(lambda: tc.div(Tensor(np.ones(1)), y).sum(), [y])


@pytest.mark.parametrize("name", sorted(cases()))
def test_every_op_passes_grad_check(name):
    # the acceptance suite runs 20 seeds per op; three keep the unit run quick
    for seed in range(3):
        assert run_case(name, seed) < 1e-5


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 2**16))
def test_gradient_linearity(a, b, seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 2)))

    def f():
        return tc.exp(tc.matmul(x, w) * 0.3).sum()

    def g():
        return (x * x * x).sum()

    grads = []
    for fn in (f, g, lambda: f() * a + g() * b):
        x.grad = None
        backward(fn())
        grads.append(x.grad.copy())
    np.testing.assert_allclose(grads[2], a * grads[0] + b * grads[1], rtol=1e-10, atol=1e-10)


def test_default_precision_is_f32():
    assert tc.tensor([1.0, 2.0]).dtype == np.float32
