"""Central finite-difference gradient checks."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import Tensor, Tape, backward, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> float:
    """``||a - n|| / max(||a||, ||n||, floor)`` over the whole array."""
    diff = np.linalg.norm(np.ravel(analytic - numeric))
    scale = max(np.linalg.norm(np.ravel(analytic)), np.linalg.norm(np.ravel(numeric)), floor)
    return float(diff / scale)


def numeric_grad(fn: Callable[[], Tensor], x: Tensor, eps: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. entries of ``x``.

    ``indices`` restricts evaluation to a subset of flat positions; the other
    entries of the returned array are zero.
    """
    flat = x.data.reshape(-1)
    grad = np.zeros_like(flat)
    idx = range(flat.size) if indices is None else indices
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = fn().item()
            flat[i] = orig - eps
            fm = fn().item()
            flat[i] = orig
            grad[i] = (fp - fm) / (2 * eps)
    return grad.reshape(x.shape)


def analytic_grads(fn: Callable[[], Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    for x in inputs:
        x.grad = None
    with Tape():
        out = fn()
    backward(out)
    return [np.zeros(x.shape) if x.grad is None else x.grad.copy() for x in inputs]


def check_grads(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> list[float]:
    """Relative error of analytic vs numeric gradient for each input."""
    analytic = analytic_grads(fn, inputs)
    return [relative_error(a, numeric_grad(fn, x, eps)) for a, x in zip(analytic, inputs)]
