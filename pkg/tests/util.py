"""Shared test helpers: finite-difference oracles and comparisons."""

import numpy as np


def fd_grad(f, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central finite differences of scalar-valued f w.r.t. x, in place.

    f must recompute its value from the current contents of x; x is
    restored after probing. Use float64 arrays so the quotient is not
    drowned by rounding noise.
    """
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Elementwise |a-b| / max(|a|, |b|, floor), reduced with max.

    The floor is scale-aware: elements far below the array's gradient
    magnitude cannot be resolved by h=1e-3 central differences (truncation
    error dominates), so they are compared against the array scale instead
    of their own near-zero value.
    """
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), max(floor, 1e-2 * scale))
    return float(np.max(np.abs(a - b) / denom))
