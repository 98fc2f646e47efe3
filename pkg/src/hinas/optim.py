"""SGD with momentum, Adam, and the cosine learning-rate schedule.

The step functions update numpy buffers in place and keep their slots in a
caller-owned ``state`` dict, so optimizer state serialises with the checkpoint.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import NumericalError


def _check_finite(grads: Sequence[np.ndarray], names: Sequence[str] | None) -> None:
    for k, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            where = names[k] if names else f"#{k}"
            raise NumericalError(f"non-finite gradient in {where}")


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: dict, lr: float,
             momentum: float = 0.9, weight_decay: float = 0.0, names: Sequence[str] | None = None):
    """``v = momentum * v + g + wd * p``; ``p -= lr * v``."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    _check_finite(grads, names)
    bufs = state.setdefault("momentum", [np.zeros_like(p) for p in params])
    for p, g, v in zip(params, grads, bufs):
        if p.shape != g.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.shape}")
        d = g + weight_decay * p if weight_decay else g
        v *= momentum
        v += d
        p -= lr * v


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: dict, lr: float,
              weight_decay: float = 0.0, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, names: Sequence[str] | None = None):
    """Bias-corrected Adam; weight decay enters as an L2 term on the gradient."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    _check_finite(grads, names)
    m = state.setdefault("m", [np.zeros_like(p) for p in params])
    v = state.setdefault("v", [np.zeros_like(p) for p in params])
    t = state["t"] = int(state.get("t", 0)) + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, mk, vk in zip(params, grads, m, v):
        if p.shape != g.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.shape}")
        d = g + weight_decay * p if weight_decay else g
        mk *= beta1
        mk += (1.0 - beta1) * d
        vk *= beta2
        vk += (1.0 - beta2) * d * d
        p -= lr * (mk / c1) / (np.sqrt(vk / c2) + eps)


def clip_grad_norm(params, max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``; returns the norm."""
    grads = [p.grad for p in params if p.grad is not None]
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if not math.isfinite(norm):
        raise NumericalError("non-finite gradient norm")
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for g in grads:
            g *= scale
    return norm


def cosine_lr(epoch: float, epochs_max: float, lr_max: float, lr_min: float) -> float:
    if not 0 <= epoch <= epochs_max:
        raise ValueError(f"epoch {epoch} outside [0, {epochs_max}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * epoch / epochs_max))


class Optimizer:
    """Binds a step function to a named parameter list."""

    def __init__(self, named_params, **hyper):
        self.names = [n for n, _ in named_params]
        self.params = [p for _, p in named_params]
        self.hyper = hyper
        self.state: dict = {}

    def grads(self):
        return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for slot, value in self.state.items():
            if isinstance(value, list):
                for n, arr in zip(self.names, value):
                    out[f"{slot}:{n}"] = arr
            else:
                out[slot] = np.asarray(value)
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        slots: dict = {}
        for key, arr in arrays.items():
            if ":" in key:
                slot, name = key.split(":", 1)
                slots.setdefault(slot, {})[name] = arr
            else:
                self.state[key] = arr.item()
        for slot, by_name in slots.items():
            self.state[slot] = [np.array(by_name[n]) for n in self.names]


class SGD(Optimizer):
    def step(self, lr: float):
        sgd_step([p.data for p in self.params], self.grads(), self.state, lr,
                 self.hyper.get("momentum", 0.9), self.hyper.get("weight_decay", 0.0), self.names)


class Adam(Optimizer):
    def step(self, lr: float | None = None):
        h = self.hyper
        adam_step([p.data for p in self.params], self.grads(), self.state,
                  h["lr"] if lr is None else lr, h.get("weight_decay", 0.0), h.get("beta1", 0.9),
                  h.get("beta2", 0.999), h.get("eps", 1e-8), self.names)
