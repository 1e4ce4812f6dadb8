"""Central finite-difference checks for tape gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tape as T


def numerical_gradient(fn: Callable[..., T.Tensor], inputs: Sequence[np.ndarray],
                       step: float = 1e-5) -> list[np.ndarray]:
    """Central differences of scalar ``fn`` using forward values only."""
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    out = []
    for x in inputs:
        g = np.zeros_like(x)
        flat, gflat = x.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(fn(*[T.Tensor(v) for v in inputs]).values)
            flat[i] = orig - step
            lo = float(fn(*[T.Tensor(v) for v in inputs]).values)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * step)
        out.append(g)
    return out


def analytic_gradient(fn: Callable[..., T.Tensor], inputs: Sequence[np.ndarray]) -> list[np.ndarray]:
    with T.Tape():
        leaves = [T.Tensor(x, requires_grad=True) for x in inputs]
        root = fn(*leaves)
        return T.grad(root, leaves)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max absolute deviation scaled by the larger gradient magnitude (clamped at ``floor``)."""
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0), floor)
    return float(np.max(np.abs(analytic - numeric), initial=0.0) / scale)


def check_gradients(fn: Callable[..., T.Tensor], inputs: Sequence[np.ndarray],
                    step: float = 1e-5) -> float:
    """Worst relative error between tape and finite-difference gradients over all inputs."""
    a = analytic_gradient(fn, inputs)
    n = numerical_gradient(fn, inputs, step)
    return max(relative_error(x, y) for x, y in zip(a, n))
