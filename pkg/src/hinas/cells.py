"""Candidate operators, mixed edges and the relaxed supercell."""
from __future__ import annotations

import enum

import numpy as np

from . import nn
from .autodiff import Parameter, Tensor
from .autodiff import functional as F


class OpKind(enum.IntEnum):
    """Candidate operators. The ordinal is the serialized form; do not reorder."""

    CONV3 = 0
    SEP3 = 1
    SEP5 = 2
    DIL3 = 3
    DIL5 = 4
    SKIP = 5
    NONE = 6

    @property
    def label(self) -> str:
        return _LABELS[self]


_LABELS = {
    OpKind.CONV3: "conv3",
    OpKind.SEP3: "sep3",
    OpKind.SEP5: "sep5",
    OpKind.DIL3: "dil3",
    OpKind.DIL5: "dil5",
    OpKind.SKIP: "skip",
    OpKind.NONE: "none",
}

NUM_OPS = len(OpKind)
CONV_KINDS = (OpKind.CONV3, OpKind.SEP3, OpKind.SEP5, OpKind.DIL3, OpKind.DIL5)


class ConvOp(nn.Module):
    """LeakyReLU -> convolution -> batch norm, same padding."""

    def __init__(self, kind: OpKind, c: int, rng: np.random.Generator, affine: bool = False,
                 slope: float = nn.LEAKY_SLOPE):
        self.kind = kind
        self.slope = slope
        if kind in (OpKind.SEP3, OpKind.SEP5):
            k = 3 if kind is OpKind.SEP3 else 5
            self.depthwise = nn.Conv2d(c, c, k, rng, groups=c, bias=False)
            self.pointwise = nn.Conv2d(c, c, 1, rng, bias=False)
        else:
            k, dil = {OpKind.CONV3: (3, 1), OpKind.DIL3: (3, 2), OpKind.DIL5: (5, 2)}[kind]
            self.conv = nn.Conv2d(c, c, k, rng, dilation=dil, bias=False)
        self.bn = nn.BatchNorm2d(c, affine=affine)

    def forward(self, x: Tensor) -> Tensor:
        return self.forward_activated(F.leaky_relu(x, self.slope))

    def forward_activated(self, act: Tensor) -> Tensor:
        """Run conv + BN on an input that already went through the LeakyReLU."""
        if self.kind in (OpKind.SEP3, OpKind.SEP5):
            y = F.separable_conv(act, self.depthwise.weight, self.pointwise.weight)
        else:
            y = self.conv(act)
        return self.bn(y)


class Identity(nn.Module):
    def forward(self, x: Tensor) -> Tensor:
        return x


class Zero(nn.Module):
    """Returns an all-zero map; gradients through it are zero."""

    def forward(self, x: Tensor) -> Tensor:
        return F.mul(x, 0.0)


def make_candidate_op(kind: OpKind, c: int, rng: np.random.Generator | None = None,
                      affine: bool = False, slope: float = nn.LEAKY_SLOPE) -> nn.Module:
    if c < 1:
        raise ValueError("channel count must be positive")
    kind = OpKind(kind)
    if kind is OpKind.SKIP:
        return Identity()
    if kind is OpKind.NONE:
        return Zero()
    return ConvOp(kind, c, rng if rng is not None else np.random.default_rng(0), affine, slope)


class CellAlphas(nn.Module):
    """One length-7 operator-weight vector per cell edge."""

    def __init__(self, n_nodes: int):
        self.n_nodes = n_nodes
        self.edge = [Parameter(np.zeros(NUM_OPS)) for _ in range(num_edges(n_nodes))]

    def matrix(self) -> np.ndarray:
        return np.stack([p.data for p in self.edge]).astype(np.float64)

    def reset(self) -> None:
        for p in self.edge:
            p.data[...] = 0.0


def num_edges(n_nodes: int) -> int:
    return sum(2 + i for i in range(n_nodes))


def edge_index(node: int, source: int) -> int:
    """Flat index of the edge feeding ``node`` from input ``source``."""
    return sum(2 + i for i in range(node)) + source


class EdgeMixture(nn.Module):
    """All seven candidates on one edge, blended by ``softmax(alpha)``."""

    def __init__(self, c: int, alpha: Parameter, rng: np.random.Generator, affine: bool = False,
                 slope: float = nn.LEAKY_SLOPE):
        self.c = c
        self.slope = slope
        self._alpha = alpha  # owned by CellAlphas; kept out of this module's parameter walk
        self.ops = {kind.label: make_candidate_op(kind, c, rng, affine, slope) for kind in OpKind}

    @property
    def alpha(self) -> Parameter:
        return self._alpha

    def forward(self, x: Tensor) -> Tensor:
        return mixed_edge_forward(self, x)


def mixed_edge_forward(edge: EdgeMixture, x: Tensor, weights: Tensor | None = None) -> Tensor:
    """``sum_k softmax(alpha)_k * op_k(x)``.

    The LeakyReLU in front of every convolutional candidate is computed once
    and shared, which is the same function with fewer recorded nodes.
    """
    if x.shape[1] != edge.c:
        raise ValueError(f"edge expects {edge.c} channels, got {x.shape[1]}")
    if weights is None:
        weights = F.softmax(edge.alpha)
    act = None
    outs: list[Tensor | None] = []
    for kind in OpKind:
        op = edge.ops[kind.label]
        if isinstance(op, ConvOp):
            if act is None:
                act = F.leaky_relu(x, op.slope)
            outs.append(op.forward_activated(act))
        elif isinstance(op, Zero):
            outs.append(None)
        else:
            outs.append(op(x))
    return F.weighted_sum(weights, outs)


class SuperCell(nn.Module):
    """Relaxed cell: ``n_nodes`` nodes, each summing mixed edges from all earlier states."""

    def __init__(self, n_nodes: int, level: int, base_width: int, alphas: CellAlphas,
                 rng: np.random.Generator, layer_index: int = 0, affine: bool = False,
                 slope: float = nn.LEAKY_SLOPE):
        if alphas.n_nodes != n_nodes:
            raise ValueError("alpha set built for a different node count")
        self.n_nodes = n_nodes
        self.level = level
        self.layer_index = layer_index
        self.node_width = (2 ** level) * base_width
        self._alphas = alphas
        self.calls = 0
        self.edges = {}
        for i in range(n_nodes):
            for j in range(2 + i):
                self.edges[f"{j}_{i}"] = EdgeMixture(self.node_width, alphas.edge[edge_index(i, j)],
                                                     rng, affine, slope)

    @property
    def alphas(self) -> CellAlphas:
        return self._alphas

    @property
    def out_width(self) -> int:
        return self.n_nodes * self.node_width

    def forward(self, in1: Tensor, in2: Tensor) -> Tensor:
        return supercell_forward(self, in1, in2)


def supercell_forward(cell: SuperCell, in1: Tensor, in2: Tensor) -> Tensor:
    for t in (in1, in2):
        if t.shape[1] != cell.node_width:
            raise ValueError(f"cell input must have {cell.node_width} channels, got {t.shape[1]}")
    cell.calls += 1
    states = [in1, in2]
    for i in range(cell.n_nodes):
        node = None
        for j in range(2 + i):
            y = mixed_edge_forward(cell.edges[f"{j}_{i}"], states[j])
            node = y if node is None else F.add(node, y)
        states.append(node)
    return F.concat_channels(states[2:])


def init_alpha(alpha_sets) -> None:
    """Zero every operator weight so each edge starts as a uniform mixture."""
    for a in alpha_sets:
        a.reset()
