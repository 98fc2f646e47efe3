"""Module containers and the few layers the networks need."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .autodiff import Parameter, Tensor
from .autodiff import functional as F
from .autodiff.tensor import default_dtype

LEAKY_SLOPE = 0.2


def kaiming_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Module:
    """Attribute-walking container in the usual style.

    Parameters are discovered through attributes, lists and dicts of modules.
    A parameter object reachable by several paths (aliased weights) is
    reported once, under the first path found.
    """

    training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(val, (Module, Parameter)):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, (Module, Parameter)):
                        yield f"{key}.{i}", item
            elif isinstance(val, dict):
                for k, item in val.items():
                    if isinstance(item, (Module, Parameter)):
                        yield f"{key}.{k}", item

    def named_parameters(self, prefix: str = "", _seen: set | None = None) -> Iterator[tuple[str, Parameter]]:
        seen = set() if _seen is None else _seen
        for key, child in self._children():
            name = f"{prefix}{key}"
            if isinstance(child, Parameter):
                if id(child) in seen:
                    continue
                seen.add(id(child))
                if not child.name:
                    child.name = name
                yield name, child
            else:
                yield from child.named_parameters(prefix=name + ".", _seen=seen)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, val in getattr(self, "_buffers", {}).items():
            yield f"{prefix}{key}", val
        for key, child in self._children():
            if isinstance(child, Module):
                yield from child.named_buffers(prefix=f"{prefix}{key}.")

    def modules(self) -> Iterator[Module]:
        yield self
        for _, child in self._children():
            if isinstance(child, Module):
                yield from child.modules()

    def train(self, mode: bool = True) -> Module:
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({f"buffer:{name}": b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        for name, arr in state.items():
            if name.startswith("buffer:"):
                target = buffers[name[len("buffer:"):]]
                target[...] = arr
            else:
                p = params[name]
                if p.shape != arr.shape:
                    raise ValueError(f"shape mismatch for {name}: {p.shape} vs {arr.shape}")
                p.data = np.array(arr, dtype=p.dtype, order="C")
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)[:5]}")


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, dilation: int = 1,
                 groups: int = 1, bias: bool = True, padding: int | str = "same"):
        self.k, self.dilation, self.groups, self.padding = k, dilation, groups, padding
        fan_in = (c_in // groups) * k * k
        self.weight = Parameter(kaiming_normal(rng, (c_out, c_in // groups, k, k), fan_in))
        self.bias = Parameter(np.zeros(c_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, padding=self.padding,
                        dilation=self.dilation, groups=self.groups)


class BatchNorm2d(Module):
    def __init__(self, c: int, affine: bool = True, eps: float = 1e-5, momentum: float = 0.1):
        self.eps, self.momentum = eps, momentum
        self.weight = Parameter(np.ones(c)) if affine else None
        self.bias = Parameter(np.zeros(c)) if affine else None
        self._buffers = {"running_mean": np.zeros(c, dtype=default_dtype()),
                         "running_var": np.ones(c, dtype=default_dtype())}

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(x, self._buffers["running_mean"], self._buffers["running_var"],
                            self.weight, self.bias, training=self.training,
                            eps=self.eps, momentum=self.momentum)


def count_params(net: Module) -> int:
    """Number of trainable scalars (BN affine included, running stats excluded)."""
    return int(sum(p.data.size for p in net.parameters()))
