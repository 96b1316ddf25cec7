import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def agree(a, b, rtol, atol=0.0):
    """Entry-wise |a - b| <= atol + rtol * max(|a|, |b|)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return bool(np.all(np.abs(a - b) <= atol + rtol * np.maximum(np.abs(a), np.abs(b))))


def central_diff(fun, x, h=1e-6):
    """Independent central finite differences (kept deliberately simple)."""
    x = np.asarray(x, dtype=np.float64).copy()
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fun(x)
        flat[i] = orig - h
        dn = fun(x)
        flat[i] = orig
        gf[i] = (up - dn) / (2.0 * h)
    return g
