"""Minimal reverse-mode autodiff on numpy arrays."""
from . import functional
from .gradcheck import grad_check
from .kernels import BACKEND
from .tensor import (
    Parameter,
    Tensor,
    backward,
    count_activations,
    default_dtype,
    grad_enabled,
    no_grad,
    precision,
    set_default_dtype,
)

__all__ = [
    "BACKEND",
    "Parameter",
    "Tensor",
    "backward",
    "count_activations",
    "default_dtype",
    "functional",
    "grad_check",
    "grad_enabled",
    "no_grad",
    "precision",
    "set_default_dtype",
]
