"""Shared test utilities: finite-difference gradient checking."""

import numpy as np

from grie import tensor as T


def numeric_grad(fn, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of a scalar-valued fn at x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn(x))
        flat[i] = orig - h
        fm = float(fn(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def check_grad(build, x0: np.ndarray, h: float = 1e-3, tol: float = 1e-6):
    """Compare reverse-mode and finite-difference gradients of build(x).

    ``build`` maps a Tensor to a scalar Tensor. Input is promoted to float64
    so the finite-difference reference is trustworthy at tol.
    """
    x0 = np.asarray(x0, dtype=np.float64)

    t = T.Tensor(x0.copy(), requires_grad=True)
    loss = build(t)
    T.backward(loss)
    analytic = t.grad

    numeric = numeric_grad(lambda arr: build(T.Tensor(arr)).item(), x0, h=h)

    err = np.max(np.abs(analytic - numeric)) if analytic.size else 0.0
    assert err < tol, f"gradient mismatch: max abs err {err:.3e} >= {tol:.0e}"
    return err
