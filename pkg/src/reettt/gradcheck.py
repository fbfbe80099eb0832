"""Central finite-difference gradient checks."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / scale)


def _eval(fn, inputs):
    with no_grad():
        return float(fn(*inputs).data)


def numeric_grad(fn: Callable[..., Tensor], inputs: Sequence[Tensor], index: int, step: float = 1e-5) -> np.ndarray:
    """Elementwise central difference of scalar ``fn`` w.r.t. ``inputs[index]``."""
    x = inputs[index]
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = _eval(fn, inputs)
        flat[i] = orig - step
        fm = _eval(fn, inputs)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * step)
    return grad


def analytic_grads(fn: Callable[..., Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    for x in inputs:
        x.grad = None
    out = fn(*inputs)
    out.backward()
    return [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[Tensor], step: float = 1e-5) -> float:
    """Largest norm-relative error between tape and elementwise FD gradients."""
    grads = analytic_grads(fn, inputs)
    worst = 0.0
    for i, x in enumerate(inputs):
        if not x.requires_grad:
            continue
        worst = max(worst, _rel(grads[i], numeric_grad(fn, inputs, i, step)))
    return worst


def directional_gradcheck(fn: Callable[..., Tensor], inputs: Sequence[Tensor], rng: np.random.Generator,
                          n_directions: int = 3, step: float = 1e-5) -> float:
    """Compare <grad, u> with the central difference along random unit directions ``u``.

    Used where elementwise differencing is too costly (whole-model checks).
    """
    params = [x for x in inputs if x.requires_grad]
    grads = analytic_grads(fn, inputs)
    grads = [g for x, g in zip(inputs, grads) if x.requires_grad]
    worst = 0.0
    for _ in range(n_directions):
        dirs = [rng.standard_normal(p.shape) for p in params]
        norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
        dirs = [d / norm for d in dirs]
        analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
        base = [p.data.copy() for p in params]
        for p, b, d in zip(params, base, dirs):
            p.data = b + step * d
        fp = _eval(fn, inputs)
        for p, b, d in zip(params, base, dirs):
            p.data = b - step * d
        fm = _eval(fn, inputs)
        for p, b in zip(params, base):
            p.data = b
        numeric = (fp - fm) / (2 * step)
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-300))
    return worst
