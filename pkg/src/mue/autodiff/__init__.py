"""Minimal reverse-mode automatic differentiation on numpy arrays."""
from . import ops
from .gradcheck import GradCheckError, analytic_grad, grad_check, numeric_grad
from .optim import AdamState, adam_step, piecewise_lr
from .tensor import (
    Tensor,
    as_tensor,
    backward,
    build_tape,
    get_dtype,
    grad_enabled,
    no_grad,
    precision,
    set_debug,
)

__all__ = [
    "AdamState",
    "GradCheckError",
    "Tensor",
    "adam_step",
    "analytic_grad",
    "as_tensor",
    "backward",
    "build_tape",
    "get_dtype",
    "grad_check",
    "grad_enabled",
    "no_grad",
    "numeric_grad",
    "ops",
    "piecewise_lr",
    "precision",
    "set_debug",
]
