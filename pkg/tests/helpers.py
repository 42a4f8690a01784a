"""Shared test oracles: reference implementations independent of the engine."""

import numpy as np

from osreg.autodiff import Tensor, backward


def matmul_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop reference product."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n), dtype=a.dtype)
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def fd_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.maximum.reduce([np.abs(a), np.abs(b), np.full_like(a, 1e-8)])
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def check_grads(build, arrays, tol=1e-6):
    """Compare analytic gradients of build(*tensors) against central differences."""
    tensors = [Tensor(a.copy(), requires_grad=True, dtype="f64") for a in arrays]
    backward(build(*tensors))
    for i, t in enumerate(tensors):
        def f(x, i=i):
            probes = [Tensor(a.copy(), dtype="f64") for a in arrays]
            probes[i] = Tensor(x.copy(), dtype="f64")
            return float(np.sum(build(*probes).data))

        numeric = fd_grad(f, arrays[i].copy())
        assert t.grad is not None
        assert rel_err(t.grad, numeric) < tol, f"gradient mismatch on input {i}"
