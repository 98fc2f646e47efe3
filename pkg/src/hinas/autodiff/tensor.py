"""Reverse-mode tensor core.

Every differentiable op produces a :class:`Tensor` that remembers its parents
and a closure mapping the output gradient to parent gradients. ``backward``
orders the recorded graph topologically, replays it in reverse once, and then
drops the graph references so intermediate buffers can be freed.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

_DTYPE = np.float32
_GRAD_ENABLED = True


class _Stats:
    def __init__(self):
        self.nodes = 0
        self.elements = 0


_STATS: list[_Stats] = []


def default_dtype():
    return _DTYPE


def set_default_dtype(dtype) -> None:
    global _DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DTYPE = dtype


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the default dtype (``float64`` for gradient checks)."""
    old = _DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def count_activations() -> Iterator[_Stats]:
    """Count graph nodes (and their elements) recorded inside the block."""
    stats = _Stats()
    _STATS.append(stats)
    try:
        yield stats
    finally:
        _STATS.remove(stats)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            # keep the precision of float arrays; everything else gets the default
            keep = isinstance(data, np.ndarray) and arr.dtype in (np.float32, np.float64)
            dtype = arr.dtype if keep else _DTYPE
        self.data = np.asarray(arr, dtype=dtype, order="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # -- basic info -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -- graph ----------------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        backward(self, grad)

    # arithmetic sugar; implementations live in functional
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import functional as F
        return F.div(self, other)

    def __rtruediv__(self, other):
        from . import functional as F
        return F.div(other, self)

    def __neg__(self):
        from . import functional as F
        return F.mul(self, -1.0)

    def __getitem__(self, idx):
        from . import functional as F
        return F.getitem(self, idx)

    def sum(self):
        from . import functional as F
        return F.sum(self)

    def mean(self):
        from . import functional as F
        return F.mean(self)

    def reshape(self, *shape):
        from . import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)


class Parameter(Tensor):
    """A trainable leaf tensor. ``name`` is filled in by the owning module."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype if dtype is not None else _DTYPE)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_DTYPE))


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op result; record it on the graph when any parent needs grad."""
    out = Tensor.__new__(Tensor)
    out.data = data = np.asarray(data)
    out.grad = None
    out._parents = ()
    out._backward = None
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
        for s in _STATS:
            s.nodes += 1
            s.elements += data.size
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable tensor.

    Leaf gradients add onto existing values; callers zero them between steps.
    """
    if grad is None:
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=loss.data.dtype)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg
    # drop the recorded graph
    for node in order:
        node._parents = ()
        node._backward = None
