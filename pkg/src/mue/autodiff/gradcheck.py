from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, precision


class GradCheckError(AssertionError):
    """Raised when an analytic or numeric gradient is not finite."""


def numeric_grad(f: Callable[..., Tensor], arrays: Sequence[np.ndarray], h: float = 1e-5) -> list:
    """Central differences of scalar ``f`` with respect to each array."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    out = []
    with precision(np.float64):
        for k, a in enumerate(arrays):
            g = np.zeros_like(a)
            flat, gflat = a.reshape(-1), g.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                fp = float(f(*[Tensor(x) for x in arrays]).data)
                flat[i] = old - h
                fm = float(f(*[Tensor(x) for x in arrays]).data)
                flat[i] = old
                gflat[i] = (fp - fm) / (2 * h)
            out.append(g)
    return out


def analytic_grad(f: Callable[..., Tensor], arrays: Sequence[np.ndarray]) -> list:
    with precision(np.float64):
        ts = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
        backward(f(*ts))
        return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]


def grad_check(f: Callable[..., Tensor], arrays: Sequence[np.ndarray], h: float = 1e-5) -> float:
    """Max over all coordinates of ``|analytic - numeric| / max(1, |numeric|)``.

    ``f`` maps Tensors (one per array) to a scalar Tensor and is evaluated in
    float64.
    """
    ana = analytic_grad(f, arrays)
    num = numeric_grad(f, arrays, h)
    worst = 0.0
    for k, (a, n) in enumerate(zip(ana, num)):
        for name, g in (("analytic", a), ("numeric", n)):
            bad = np.argwhere(~np.isfinite(g))
            if bad.size:
                raise GradCheckError(f"{name} gradient not finite at input {k}, coordinate {tuple(bad[0])}")
        err = np.abs(a - n) / np.maximum(1.0, np.abs(n))
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
