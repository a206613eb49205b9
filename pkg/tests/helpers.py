"""Shared test utilities."""

import numpy as np


def finite_difference(f, x, h=1e-4):
    """Central differences of scalar ``f`` w.r.t. every entry of ``x`` (restored afterwards)."""
    g = np.zeros_like(x, dtype=np.float64)
    for i in range(x.size):
        old = x.flat[i]
        x.flat[i] = old + h
        fp = f()
        x.flat[i] = old - h
        fm = f()
        x.flat[i] = old
        g.flat[i] = (fp - fm) / (2 * h)
    return g


def rel_error(analytic, numeric, floor=1e-8):
    """Max abs deviation relative to the numeric gradient's scale (floored for all-zero gradients)."""
    scale = max(np.abs(numeric).max(), floor)
    return float(np.abs(analytic - numeric).max() / scale)
