import numpy as np
import pytest

from stegcl.errors import ValidationError
from stegcl.tensor import Tensor, concat_channels, leaky_relu, sigmoid

from conftest import check_gradients


def test_sum_backward_is_ones():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    x.sum().backward()
    assert np.array_equal(x.grad, np.ones(3))


def test_square_sum_backward():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    (x * x).sum().backward()
    assert np.allclose(x.grad, [2.0, 4.0])


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValidationError):
        (x * 2.0).backward()


def test_repeated_backward_accumulates():
    x = Tensor(np.array([3.0]), requires_grad=True)
    loss = (x * x).sum()
    loss.backward()
    loss.backward()
    assert np.allclose(x.grad, [12.0])  # 2 * (2*x)


def test_zero_grad_then_backward_is_deterministic():
    x = Tensor(np.array([1.5, -0.5]), requires_grad=True)
    loss = (x * x * 0.5).sum()
    loss.backward()
    first = x.grad.copy()
    x.zero_grad()
    loss2 = (x * x * 0.5).sum()
    loss2.backward()
    assert np.array_equal(first, x.grad)


def test_shape_mismatch_raises():
    a = Tensor(np.ones(3))
    b = Tensor(np.ones(4))
    with pytest.raises(ValidationError, match="shape"):
        a + b


def test_scalar_arithmetic_values():
    x = Tensor(np.array([2.0, 4.0]))
    assert np.allclose((1.0 - x).data, [-1.0, -3.0])
    assert np.allclose((8.0 / x).data, [4.0, 2.0])
    assert np.allclose((x ** 2).data, [4.0, 16.0])
    assert np.allclose((-x).data, [-2.0, -4.0])


def test_dtype_preserved_for_floats():
    assert Tensor(np.ones(2, dtype=np.float64)).dtype == np.float64
    assert Tensor(np.ones(2, dtype=np.float32)).dtype == np.float32
    assert Tensor([1, 2]).dtype == np.float32  # non-float coerced


def test_leaky_relu_values():
    x = Tensor(np.array([2.0, -3.0, 0.0]))
    out = leaky_relu(x, 0.01)
    assert np.allclose(out.data, [2.0, -0.03, 0.0])


def test_leaky_relu_subgradient_at_zero_is_slope():
    x = Tensor(np.array([0.0]), requires_grad=True)
    leaky_relu(x, 0.25).sum().backward()
    assert np.allclose(x.grad, [0.25])


def test_leaky_relu_slope_validation():
    with pytest.raises(ValidationError):
        leaky_relu(Tensor(np.ones(2)), 1.0)


def test_sigmoid_values_and_saturation():
    x = Tensor(np.array([0.0, 50.0, -50.0]))
    out = sigmoid(x).data
    assert out[0] == pytest.approx(0.5)
    assert out[1] == pytest.approx(1.0, abs=1e-15)
    assert out[2] == pytest.approx(0.0, abs=1e-15)
    assert np.all(np.isfinite(out))


def test_concat_channels_and_split_grad(rng):
    a = rng.random((2, 3, 4, 4))
    b = rng.random((2, 2, 4, 4))
    out = concat_channels(Tensor(a), Tensor(b))
    assert out.shape == (2, 5, 4, 4)
    assert np.array_equal(out.data[:, :3], a)

    def loss(ts):
        return (concat_channels(ts[0], ts[1]) ** 2).sum()

    check_gradients(loss, [a, b])


def test_concat_channels_shape_check():
    with pytest.raises(ValidationError):
        concat_channels(Tensor(np.ones((1, 3, 4, 4))), Tensor(np.ones((1, 3, 5, 4))))


@pytest.mark.parametrize("build", [
    lambda ts: (ts[0] * ts[1]).sum(),
    lambda ts: (ts[0] / (ts[1] + 2.0)).mean(),
    lambda ts: ((ts[0] - ts[1]) ** 3).sum(),
    lambda ts: (ts[0].clip(lo=0.2, hi=0.8) * ts[1]).sum(),
    lambda ts: ((ts[0] + 1.5).log() * ts[1]).mean(),
    lambda ts: ((ts[0] + 2.0).sqrt() + sigmoid(ts[1])).sum(),
])
def test_elementwise_gradients(build, rng):
    a = rng.random((3, 4)) * 0.6 + 0.1
    b = rng.random((3, 4)) * 0.6 + 0.1
    check_gradients(build, [a, b], tol=1e-6)


def test_graph_reuse_two_branches():
    # one tensor feeding two branches accumulates both contributions
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * 3.0
    loss = (y * y).sum() + (x * 4.0).sum()
    loss.backward()
    assert np.allclose(x.grad, [2 * 3.0 * 3.0 * 2.0 + 4.0])


def test_intermediate_tensors_get_grads():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    mid = x * 2.0
    mid.sum().backward()
    assert mid.grad is not None and np.allclose(mid.grad, [1.0, 1.0])
    assert np.allclose(x.grad, [2.0, 2.0])
