"""Finite-difference gradient verification (run under ``precision("float64")``)."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, default_dtype


def _scalarize(out: Tensor, probe: np.ndarray | None) -> Tensor:
    from . import functional as F

    if out.data.size == 1:
        return F.reshape(out, ())
    return F.sum(F.mul(out, Tensor(probe, dtype=out.dtype)))


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], step: float = 1e-4,
               max_elements: int | None = None, seed: int = 0) -> float:
    """Largest relative error between analytic and central-difference gradients.

    Non-scalar outputs are reduced with a fixed random probe. Each input tensor
    contributes one relative error ``|a - n|_inf / max(|a|_inf, |n|_inf)``; when
    ``max_elements`` is set only that many randomly chosen entries per input are
    perturbed. Raises ``ValueError`` if ``f`` produces non-finite values.
    """
    if default_dtype() is not np.float64 or any(t.dtype != np.float64 for t in inputs):
        raise ValueError("grad_check requires float64 mode")
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.requires_grad = True
        t.grad = None

    first = f(*inputs)
    if not np.all(np.isfinite(first.data)):
        raise ValueError("function output is not finite")
    probe = rng.standard_normal(first.shape) if first.data.size > 1 else None
    loss = _scalarize(first, probe)
    backward(loss)
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]

    def value() -> float:
        out = f(*inputs)
        if not np.all(np.isfinite(out.data)):
            raise ValueError("function output is not finite")
        return float(_scalarize(out, probe).data)

    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = rng.choice(flat.size, size=max_elements, replace=False)
        num = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = value()
            flat[i] = orig - step
            down = value()
            flat[i] = orig
            num[j] = (up - down) / (2 * step)
        ana = a.reshape(-1)[idx]
        scale = max(np.abs(ana).max(initial=0.0), np.abs(num).max(initial=0.0))
        if scale == 0.0:
            continue
        worst = max(worst, float(np.abs(ana - num).max() / scale))
    for t in inputs:
        t.grad = None
    return worst
