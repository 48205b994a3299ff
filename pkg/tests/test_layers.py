import numpy as np
import pytest

from stegcl.errors import ValidationError
from stegcl.layers import (BatchNormState, avg_pool2, batch_norm, conv2d, filter1d_valid,
                           filter2d_valid, global_avg_pool, kaiming_uniform)
from stegcl.metrics import gaussian_window
from stegcl.tensor import Tensor

from conftest import check_gradients


# ----------------------------------------------------------------------
# conv2d


def test_conv_zero_input_gives_bias():
    x = Tensor(np.zeros((1, 1, 3, 3)))
    k = Tensor(np.ones((2, 1, 3, 3)))
    b = Tensor(np.array([0.7, -0.2]))
    out = conv2d(x, k, b).data
    assert np.allclose(out[0, 0], 0.7)
    assert np.allclose(out[0, 1], -0.2)


def test_conv_constant_input_interior_is_9c():
    c = 0.3
    x = Tensor(np.full((1, 1, 6, 6), c))
    k = Tensor(np.ones((1, 1, 3, 3)))
    out = conv2d(x, k, Tensor(np.zeros(1))).data
    assert np.allclose(out[0, 0, 1:-1, 1:-1], 9 * c)
    # border sees zero padding: corner touches only 4 input cells
    assert out[0, 0, 0, 0] == pytest.approx(4 * c)


def test_conv_one_hot_center_kernel_is_identity(rng):
    x = rng.random((2, 3, 8, 8))
    k = np.zeros((3, 3, 3, 3))
    for c in range(3):
        k[c, c, 1, 1] = 1.0
    out = conv2d(Tensor(x), Tensor(k), Tensor(np.zeros(3)))
    assert np.allclose(out.data, x)


def test_conv_channel_mismatch_names_dims():
    x = Tensor(np.zeros((1, 5, 4, 4)))
    k = Tensor(np.zeros((2, 3, 3, 3)))
    with pytest.raises(ValidationError, match="5 channels.*expects 3"):
        conv2d(x, k, Tensor(np.zeros(2)))


def test_conv_bias_shape_check():
    with pytest.raises(ValidationError, match="bias"):
        conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((2, 1, 3, 3))),
               Tensor(np.zeros(3)))


def test_conv_gradients_match_finite_differences(rng):
    x = rng.random((1, 2, 5, 5))
    k = rng.standard_normal((3, 2, 3, 3)) * 0.4
    b = rng.standard_normal(3) * 0.2

    def loss(ts):
        out = conv2d(ts[0], ts[1], ts[2])
        return (out * out + 0.1 * out).sum()

    err = check_gradients(loss, [x, k, b])
    assert err < 1e-4


def test_conv_5x5_kernel(rng):
    x = rng.random((1, 1, 7, 7))
    k = rng.standard_normal((1, 1, 5, 5)) * 0.2
    out = conv2d(Tensor(x), Tensor(k), Tensor(np.zeros(1)))
    assert out.shape == (1, 1, 7, 7)
    # interior value equals the direct window sum
    win = x[0, 0, 1:6, 2:7]
    assert out.data[0, 0, 3, 4] == pytest.approx(float((win * k[0, 0]).sum()), rel=1e-6)


# ----------------------------------------------------------------------
# batch_norm


def _state(c, gamma=None, beta=None, mean=None, var=None):
    st = BatchNormState.create(c, dtype=np.float64)
    if gamma is not None:
        st.gamma = Tensor(np.asarray(gamma, dtype=np.float64), requires_grad=True)
    if beta is not None:
        st.beta = Tensor(np.asarray(beta, dtype=np.float64), requires_grad=True)
    if mean is not None:
        st.running_mean = np.asarray(mean, dtype=np.float64)
    if var is not None:
        st.running_var = np.asarray(var, dtype=np.float64)
    return st


def test_bn_identity_on_standardized_input(rng):
    x = rng.standard_normal((4, 2, 5, 5))
    # standardize per channel with the biased variance batch_norm uses
    mu = x.mean(axis=(0, 2, 3), keepdims=True)
    sd = x.std(axis=(0, 2, 3), keepdims=True)
    x = (x - mu) / sd
    out = batch_norm(Tensor(x), _state(2), training=True)
    assert np.allclose(out.data, x, atol=1e-3)


def test_bn_constant_input_gives_beta():
    x = Tensor(np.full((2, 3, 4, 4), 0.42))
    st = _state(3, beta=[0.1, -0.5, 2.0])
    out = batch_norm(x, st, training=True).data
    for c, b in enumerate([0.1, -0.5, 2.0]):
        assert np.allclose(out[:, c], b, atol=1e-6)


def test_bn_training_updates_running_stats(rng):
    x = rng.random((2, 1, 3, 3)) + 3.0
    st = _state(1)
    batch_norm(Tensor(x), st, training=True)
    expected_mean = 0.1 * x.mean()
    assert st.running_mean[0] == pytest.approx(expected_mean, rel=1e-6)
    assert st.running_var[0] == pytest.approx(0.9 * 1.0 + 0.1 * x.var(), rel=1e-5)


def test_bn_eval_is_pure(rng):
    x = rng.random((1, 2, 4, 4))
    st = _state(2, mean=[0.2, 0.4], var=[0.5, 0.7])
    before = (st.running_mean.copy(), st.running_var.copy())
    out1 = batch_norm(Tensor(x), st, training=False).data
    out2 = batch_norm(Tensor(x), st, training=False).data
    assert np.array_equal(out1, out2)
    assert np.array_equal(st.running_mean, before[0])
    assert np.array_equal(st.running_var, before[1])


def test_bn_single_element_training_rejected():
    with pytest.raises(ValidationError, match="variance"):
        batch_norm(Tensor(np.ones((1, 2, 1, 1))), _state(2), training=True)


@pytest.mark.parametrize("training", [True, False])
def test_bn_gradients(training, rng):
    x = rng.random((3, 2, 4, 4))
    gamma = rng.random(2) + 0.5
    beta = rng.standard_normal(2) * 0.3

    def loss(ts):
        st = BatchNormState(gamma=ts[1], beta=ts[2],
                            running_mean=np.array([0.3, -0.1]),
                            running_var=np.array([0.9, 1.4]))
        out = batch_norm(ts[0], st, training=training)
        return (out * out * 0.5 + out * 0.25).sum()

    err = check_gradients(loss, [x, gamma, beta])
    assert err < 1e-4


# ----------------------------------------------------------------------
# pooling and fixed filters


def test_avg_pool2_values():
    x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    out = avg_pool2(Tensor(x)).data
    assert out.shape == (1, 1, 2, 2)
    assert out[0, 0, 0, 0] == pytest.approx((0 + 1 + 4 + 5) / 4)


def test_avg_pool2_odd_dims_drop_last(rng):
    x = rng.random((1, 1, 5, 7))
    out = avg_pool2(Tensor(x))
    assert out.shape == (1, 1, 2, 3)


def test_avg_pool2_gradients(rng):
    check_gradients(lambda ts: (avg_pool2(ts[0]) ** 2).sum(), [rng.random((2, 2, 5, 6))])


def test_filter2d_valid_matches_manual(rng):
    x = rng.random((1, 1, 6, 6))
    k = gaussian_window(3, 1.0)
    out = filter2d_valid(Tensor(x), k).data
    manual = sum(k[i, j] * x[0, 0, i : i + 4, j : j + 4] for i in range(3) for j in range(3))
    assert np.allclose(out[0, 0], manual, atol=1e-12)


def test_filter2d_too_small_raises():
    with pytest.raises(ValidationError, match="smaller"):
        filter2d_valid(Tensor(np.ones((1, 1, 4, 4))), gaussian_window(5, 1.0))


def test_filter1d_matches_filter2d(rng):
    from stegcl.metrics import _gauss1d

    x = rng.random((2, 3, 9, 9))
    g = _gauss1d(5, 1.5)
    sep = filter1d_valid(filter1d_valid(Tensor(x), g, axis=2), g, axis=3).data
    full = filter2d_valid(Tensor(x), np.outer(g, g)).data
    assert np.allclose(sep, full, atol=1e-12)


def test_filter1d_gradients(rng):
    from stegcl.metrics import _gauss1d

    g = _gauss1d(5, 1.5)
    check_gradients(
        lambda ts: (filter1d_valid(filter1d_valid(ts[0], g, axis=2), g, axis=3) ** 2).sum(),
        [rng.random((1, 2, 7, 7))])


def test_global_avg_pool(rng):
    x = rng.random((2, 3, 4, 5))
    out = global_avg_pool(Tensor(x))
    assert out.shape == (2, 3)
    assert np.allclose(out.data, x.mean(axis=(2, 3)), atol=1e-7)
    check_gradients(lambda ts: (global_avg_pool(ts[0]) ** 2).sum(), [x])


def test_kaiming_uniform_bounds_and_determinism():
    a = kaiming_uniform(np.random.default_rng(5), 8, 4, 3)
    b = kaiming_uniform(np.random.default_rng(5), 8, 4, 3)
    assert np.array_equal(a, b)
    bound = np.sqrt(2.0 / (1 + 0.01 ** 2)) * np.sqrt(3.0 / (4 * 9))
    assert np.abs(a).max() <= bound
    assert a.dtype == np.float32
