import numpy as np
import pytest

from horace import tensor as tn


def numeric_grad(fn, param, h=1e-5):
    """Central finite differences of scalar ``fn()`` w.r.t. ``param.data``."""
    grad = np.zeros_like(param.data)
    for idx in np.ndindex(param.shape):
        old = param.data[idx]
        param.data[idx] = old + h
        up = fn().item()
        param.data[idx] = old - h
        down = fn().item()
        param.data[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def rel_error(analytic, numeric):
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return np.linalg.norm(analytic - numeric) / scale


def max_grad_error(fn, params, h=1e-5):
    """Worst relative error between backprop and finite differences over ``params``."""
    for p in params:
        p.grad = None
    tn.backward(fn())
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        worst = max(worst, rel_error(analytic, numeric_grad(fn, p, h)))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
