from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Dict, Mapping, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place on ``params``."""
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise RuntimeError(f"adam_step: no gradient for {missing[:3]}{'...' if len(missing) > 3 else ''}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad
        if g.shape != p.data.shape:
            raise RuntimeError(f"adam_step: gradient shape {g.shape} != parameter shape {p.data.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        p.data -= update.astype(p.data.dtype, copy=False)


def piecewise_lr(iteration: int, values: Sequence[float], boundaries: Sequence[int]) -> float:
    """Learning rate ``values[i]`` for ``boundaries[i] <= iteration < boundaries[i+1]``."""
    if len(values) != len(boundaries) or not boundaries or boundaries[0] != 0:
        raise ValueError("piecewise_lr: need matching values/boundaries starting at 0")
    return float(values[max(bisect_right(list(boundaries), iteration) - 1, 0)])
