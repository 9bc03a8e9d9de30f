"""Shared test utilities: central-difference gradients, tolerant compares."""
from __future__ import annotations

import numpy as np


def numeric_gradient(f, arrays: list, step_scale: float = 1e-5) -> list:
    """Central differences of scalar f with step 1e-5 * (1 + |x|) per entry.

    f takes the list of arrays and returns a python float; the arrays are
    perturbed one entry at a time.
    """
    grads = []
    for ai, arr in enumerate(arrays):
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            h = step_scale * (1.0 + abs(keep))
            flat[i] = keep + h
            fp = f(arrays)
            flat[i] = keep - h
            fm = f(arrays)
            flat[i] = keep
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric) -> float:
    """Elementwise |a-n| / max(1, |a|, |n|), reduced to the worst entry."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    assert a.shape == n.shape, f"gradient shape mismatch: {a.shape} vs {n.shape}"
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / denom))


def close(a, b, tol: float) -> bool:
    a = float(a)
    b = float(b)
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))
