import numpy as np
import pytest

from stegcl.tensor import Tensor


def numerical_gradients(f, arrays, h=1e-5):
    """Central finite differences of a scalar function over a list of arrays."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gf = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(arrays)
            flat[i] = orig - h
            fm = f(arrays)
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
        worst = max(worst, np.linalg.norm(a - n) / denom)
    return worst


def check_gradients(build_loss, arrays, h=1e-5, tol=1e-4):
    """Compare backward() gradients against central differences.

    build_loss takes a list of Tensors and returns a scalar Tensor; inputs
    must be float64 for the stated tolerance to be meaningful.
    """
    tensors = [Tensor(np.asarray(a, dtype=np.float64).copy(), requires_grad=True)
               for a in arrays]
    loss = build_loss(tensors)
    loss.backward()
    analytic = [t.grad for t in tensors]
    numeric = numerical_gradients(
        lambda arrs: build_loss([Tensor(v) for v in arrs]).item(),
        [np.asarray(a, dtype=np.float64).copy() for a in arrays], h=h)
    err = max_rel_error(analytic, numeric)
    assert err < tol, f"gradient mismatch: rel err {err:.3e} >= {tol}"
    return err


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
