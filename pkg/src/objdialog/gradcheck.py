"""Central finite-difference gradient checking.

The forward callable must rebuild its graph on every invocation and return a
scalar Tensor. Checks should run on float64 tensors; float32 round-off
swamps the 1e-4 step otherwise.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tape


def numeric_gradients(forward, wrt: dict, step: float = 1e-4) -> dict:
    """Central differences of ``forward()`` w.r.t. each tensor in ``wrt``."""
    grads = {}
    for name, t in wrt.items():
        flat = t.data.reshape(-1)
        out = np.zeros_like(flat)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            hi = float(forward().data)
            flat[i] = keep - step
            lo = float(forward().data)
            flat[i] = keep
            out[i] = (hi - lo) / (2.0 * step)
        grads[name] = out.reshape(t.data.shape)
    return grads


def analytic_gradients(forward, wrt: dict) -> dict:
    for t in wrt.values():
        t.grad = None
    with Tape() as tape:
        loss = forward()
        tape.backward(loss)
    return {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
            for name, t in wrt.items()}


def max_relative_error(forward, wrt: dict, step: float = 1e-4) -> float:
    """max over entries of |analytic - numeric| / max(1, |numeric|)."""
    analytic = analytic_gradients(forward, wrt)
    numeric = numeric_gradients(forward, wrt, step=step)
    worst = 0.0
    for name in wrt:
        diff = np.abs(analytic[name] - numeric[name])
        rel = diff / np.maximum(1.0, np.abs(numeric[name]))
        if rel.size:
            worst = max(worst, float(rel.max()))
    return worst
