"""Adam optimizer over named numpy parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NumericFailure(FloatingPointError):
    """Raised when a gradient or loss becomes non-finite."""


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float = 2e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """In-place bias-corrected Adam update of ``params`` (name -> ndarray)."""
    bad = [n for n, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NumericFailure(f"non-finite gradient at step {state.step + 1} in: {', '.join(sorted(bad)[:5])}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - beta1) * g if m is None else beta1 * m + (1 - beta1) * g
        v = (1 - beta2) * g * g if v is None else beta2 * v + (1 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state
