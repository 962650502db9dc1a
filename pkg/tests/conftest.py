"""Shared test helpers.

`gradcheck` is the numerical oracle used across the suite: it compares
reverse-mode gradients against central finite differences computed by
re-running the forward function, so it is independent of the backward
implementations it is checking. All checks run in float64.
"""

import numpy as np
import pytest

from adt.tensor import Tensor, no_grad


def finite_difference(scalar_fn, array: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar_fn() w.r.t. `array`, mutated in place."""
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = scalar_fn()
        flat[i] = orig - h
        fm = scalar_fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def gradcheck(fn, *arrays, h: float = 1e-6, rtol: float = 1e-4,
              atol: float = 1e-7) -> None:
    """Check reverse-mode grads of scalar-valued fn(*tensors) numerically.

    `fn` must build a fresh graph from its tensor arguments on every call.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
    out = fn(*tensors)
    assert out.data.size == 1, "gradcheck needs a scalar function"
    out.backward()

    def scalar():
        with no_grad():
            return fn(*[Tensor(a, dtype=np.float64) for a in arrays]).item()

    for tensor, array in zip(tensors, arrays):
        numeric = finite_difference(scalar, array, h=h)
        analytic = tensor.grad
        assert analytic is not None, "no gradient reached an input"
        np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)


@pytest.fixture
def rng():
    from adt.rng import Rng

    return Rng(1234)


@pytest.fixture
def f64():
    """Build models in float64 for the duration of a test (oracle precision)."""
    from adt import tensor as tensor_mod

    prev = tensor_mod.DEFAULT_DTYPE
    tensor_mod.DEFAULT_DTYPE = np.float64
    yield
    tensor_mod.DEFAULT_DTYPE = prev


def directional_gradcheck(build_loss, params: dict, seed: int = 0,
                          h: float = 1e-6, rtol: float = 1e-4) -> None:
    """Whole-module gradient check along a random direction in float64.

    `build_loss()` must rebuild the scalar loss graph from the live module
    parameters each call. Compares sum(grad * direction) against the central
    difference of the loss when all parameters move along `direction`.
    """
    from adt.rng import Rng

    for p in params.values():
        p.grad = None
    loss = build_loss()
    loss.backward()
    rng = Rng(seed)
    direction = {k: rng.split(k).normal(p.data.shape) for k, p in params.items()}
    analytic = 0.0
    for k, p in params.items():
        if p.grad is not None:
            analytic += float(np.sum(p.grad * direction[k]))
    saved = {k: p.data.copy() for k, p in params.items()}
    try:
        with no_grad():
            for k, p in params.items():
                p.data = saved[k] + h * direction[k]
            f_plus = build_loss().item()
            for k, p in params.items():
                p.data = saved[k] - h * direction[k]
            f_minus = build_loss().item()
    finally:
        for k, p in params.items():
            p.data = saved[k]
            p.grad = None
    numeric = (f_plus - f_minus) / (2.0 * h)
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=1e-8)
