"""Shared finite-difference oracles for gradient and Hessian verification."""
import numpy as np
import pytest


def central_diff_grad(f, x, h=1e-5):
    """Central differences with per-coordinate step h * (1 + |x_i|)."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        hi = h * (1.0 + abs(x[i]))
        xp = x.copy()
        xp[i] += hi
        xm = x.copy()
        xm[i] -= hi
        g[i] = (f(xp) - f(xm)) / (2.0 * hi)
    return g


def central_diff_hess(grad, x, h=1e-5):
    """Finite differences of an analytic gradient, symmetrized."""
    x = np.asarray(x, dtype=float)
    d = x.size
    hess = np.zeros((d, d))
    for i in range(d):
        hi = h * (1.0 + abs(x[i]))
        xp = x.copy()
        xp[i] += hi
        xm = x.copy()
        xm[i] -= hi
        hess[:, i] = (grad(xp) - grad(xm)) / (2.0 * hi)
    return 0.5 * (hess + hess.T)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_spd(rng, d, jitter=None):
    a = rng.standard_normal((d, d))
    m = a @ a.T
    m += (jitter if jitter is not None else 0.5 * d) * np.eye(d)
    return m
