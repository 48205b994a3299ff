import numpy as np
import pytest

from stegcl.errors import NumericError, ValidationError
from stegcl.optim import Adam, AdamState, adam_step
from stegcl.tensor import Tensor


def test_zero_grads_leave_params_unchanged():
    p = np.array([1.0, -2.0], dtype=np.float32)
    state = AdamState.for_params([p])
    adam_step([p], [np.zeros_like(p)], state)
    assert np.array_equal(p, [1.0, -2.0])
    assert state.t == 1


def test_first_step_magnitude_is_lr():
    # bias correction makes the first update lr * g/|g| up to eps
    p = np.array([0.0])
    state = AdamState.for_params([p])
    adam_step([p], [np.array([1.0])], state, lr=0.001, eps=1e-8)
    assert p[0] == pytest.approx(-0.001, abs=1e-6)


def test_identical_params_stay_identical(rng):
    a = np.array([0.5, -0.3])
    b = a.copy()
    sa, sb = AdamState.for_params([a]), AdamState.for_params([b])
    for k in range(7):
        g = rng.standard_normal(2)
        adam_step([a], [g.copy()], sa)
        adam_step([b], [g.copy()], sb)
    assert np.array_equal(a, b)


def test_t_increments_once_per_step():
    p = np.zeros(3)
    state = AdamState.for_params([p])
    for expected in range(1, 5):
        adam_step([p], [np.ones(3)], state)
        assert state.t == expected


def test_nan_gradient_fails_fast():
    p = np.array([1.0])
    state = AdamState.for_params([p])
    with pytest.raises(NumericError):
        adam_step([p], [np.array([np.nan])], state)
    assert p[0] == 1.0  # untouched
    assert state.t == 0


def test_shape_mismatch_rejected():
    p = np.zeros(2)
    state = AdamState.for_params([p])
    with pytest.raises(ValidationError):
        adam_step([p], [np.zeros(3)], state)


def test_adam_wrapper_steps_tensor_params():
    t = Tensor(np.array([1.0, 1.0], dtype=np.float32), requires_grad=True)
    opt = Adam([t], lr=0.01)
    (t * t).sum().backward()
    opt.step()
    assert np.all(t.data < 1.0)
    opt.zero_grad()
    assert t.grad is None


def test_adam_matches_reference_formula(rng):
    # a few steps against a directly-coded reference
    p = np.array([0.7], dtype=np.float64)
    ref = p.copy()
    m = v = 0.0
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    state = AdamState.for_params([p])
    for t in range(1, 6):
        g = float(rng.standard_normal())
        adam_step([p], [np.array([g])], state, lr=lr, beta1=b1, beta2=b2, eps=eps)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        ref -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        assert p[0] == pytest.approx(ref[0], rel=1e-12)
