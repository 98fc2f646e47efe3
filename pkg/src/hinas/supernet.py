"""The outer search space: stem, L layers of width-levelled supercells, tail."""
from __future__ import annotations

import dataclasses
from collections import Counter

import numpy as np

from . import nn
from .autodiff import Parameter, Tensor
from .autodiff import functional as F
from .cells import CellAlphas, SuperCell

MAX_LEVEL = 2


@dataclasses.dataclass(frozen=True)
class RestorationTask:
    kind: str = "denoise"  # "denoise" or "sr"
    scale: int = 1
    residual: bool = True

    def __post_init__(self):
        if self.kind not in ("denoise", "sr"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.kind == "sr" and self.scale not in (2, 3, 4):
            raise ValueError("super-resolution scale must be 2, 3 or 4")
        if self.kind == "denoise" and self.scale != 1:
            raise ValueError("denoising has scale 1")

    @property
    def out_channels(self) -> int:
        return 3 * self.scale * self.scale

    @classmethod
    def denoise(cls, residual: bool = True) -> RestorationTask:
        return cls("denoise", 1, residual)

    @classmethod
    def super_resolve(cls, scale: int, residual: bool = True) -> RestorationTask:
        return cls("sr", scale, residual)


def levels(layer: int) -> list[int]:
    """Width levels present in ``layer`` (layer 0 holds two cells)."""
    return [0, 1] if layer == 0 else [0, 1, 2]


def sources(layer: int, level: int) -> list[int]:
    """Admissible previous-layer levels feeding ``level``; layer 0 reads the stem (-1)."""
    if layer == 0:
        return [-1]
    prev = levels(layer - 1)
    return [k for k in (level - 1, level, level + 1) if k in prev]


def prev2_level(layer: int, level: int) -> int:
    """Level of the two-layers-back input; -1 means the stem feature.

    When layer ``l-2`` lacks ``level`` the nearest lower level present is used.
    """
    if layer < 2:
        return -1
    avail = levels(layer - 2)
    return max(k for k in avail if k <= level)


class Stem(nn.Module):
    def __init__(self, width: int, rng: np.random.Generator, slope: float = nn.LEAKY_SLOPE):
        self.slope = slope
        self.conv1 = nn.Conv2d(3, width, 3, rng)
        self.conv2 = nn.Conv2d(width, width, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"stem expects (N, 3, H, W), got {x.shape}")
        return self.conv2(F.leaky_relu(self.conv1(x), self.slope))


class Tail(nn.Module):
    """Two 3x3 convs. The last one starts at zero so the untrained net returns its skip path."""

    def __init__(self, c_in: int, hidden: int, c_out: int, rng: np.random.Generator,
                 slope: float = nn.LEAKY_SLOPE, zero_last: bool = True):
        self.slope = slope
        self.conv1 = nn.Conv2d(c_in, hidden, 3, rng)
        self.conv2 = nn.Conv2d(hidden, c_out, 3, rng)
        if zero_last:
            self.conv2.weight.data[...] = 0.0

    def forward(self, x: Tensor) -> Tensor:
        return self.conv2(F.leaky_relu(self.conv1(x), self.slope))


def skip_path(x: Tensor, task: RestorationTask) -> Tensor:
    if task.kind == "denoise":
        return x
    return F.bicubic_resize(x, task.scale, "up")


def finish(residual: Tensor, x: Tensor, task: RestorationTask) -> Tensor:
    """Turn the tail output into the restored image (adds the skip path if enabled)."""
    if task.kind == "sr":
        residual = F.pixel_shuffle(residual, task.scale)
    if not task.residual:
        return residual
    return F.add(residual, skip_path(x, task))


class SuperNet(nn.Module):
    """Relaxed network over operators (alpha) and width paths (beta)."""

    def __init__(self, width: int, n_nodes: int, n_layers: int, task: RestorationTask,
                 seed: int = 0, lwas: bool = True, cell_sharing: bool = True,
                 affine: bool = False, slope: float = nn.LEAKY_SLOPE):
        if n_layers < 1 or n_nodes < 1 or width < 1:
            raise ValueError("width, n_nodes and n_layers must be positive")
        rng = np.random.default_rng(seed)
        self.width, self.n_nodes, self.n_layers = width, n_nodes, n_layers
        self.task = task
        self.lwas = lwas
        self.cell_sharing = cell_sharing
        self.slope = slope
        self._calls: Counter = Counter()

        self.stem = Stem(width, rng, slope)
        if lwas:
            self.alphas = {f"l{l}": CellAlphas(n_nodes) for l in range(n_layers)}
        else:
            self.alphas = {"shared": CellAlphas(n_nodes)}
        self.beta = {}
        self.proj_prev = {}
        self.proj_prev2 = {}
        self.cells = {}
        for l in range(n_layers):
            alphas = self.layer_alphas(l)
            for i in levels(l):
                c = (2 ** i) * width
                srcs = sources(l, i)
                self.beta[f"l{l}_i{i}"] = Parameter(np.zeros(len(srcs)))
                for k in srcs:
                    self.proj_prev[f"l{l}_i{i}_k{k}"] = nn.Conv2d(self.feature_width(l - 1, k), c, 1,
                                                                  rng, bias=False)
                self.proj_prev2[f"l{l}_i{i}"] = nn.Conv2d(
                    self.feature_width(l - 2, prev2_level(l, i)), c, 1, rng, bias=False)
                if cell_sharing:
                    self.cells[f"l{l}_i{i}"] = SuperCell(n_nodes, i, width, alphas, rng, l, affine, slope)
                else:
                    for k in srcs:
                        self.cells[f"l{l}_i{i}_k{k}"] = SuperCell(n_nodes, i, width, alphas, rng, l,
                                                                  affine, slope)
        last = n_layers - 1
        tail_in = sum(self.feature_width(last, i) for i in levels(last))
        self.tail = Tail(tail_in, width * n_nodes, task.out_channels, rng, slope)

    # -- bookkeeping --------------------------------------------------------
    def feature_width(self, layer: int, level: int) -> int:
        if layer < 0 or level < 0:
            return self.width
        return (2 ** level) * self.n_nodes * self.width

    def layer_alphas(self, layer: int) -> CellAlphas:
        return self.alphas[f"l{layer}"] if self.lwas else self.alphas["shared"]

    def alpha_sets(self) -> list[CellAlphas]:
        return list(self.alphas.values())

    def arch_parameters(self) -> list[Parameter]:
        ps = [p for a in self.alpha_sets() for p in a.edge]
        return ps + list(self.beta.values())

    def weight_parameters(self) -> list[Parameter]:
        arch = {id(p) for p in self.arch_parameters()}
        return [p for p in self.parameters() if id(p) not in arch]

    def beta_logits(self) -> list[list[np.ndarray]]:
        """``out[l][i]`` holds the logits over ``sources(l, i)``."""
        return [[self.beta[f"l{l}_i{i}"].data.astype(np.float64).copy() for i in levels(l)]
                for l in range(self.n_layers)]

    def alpha_logits(self) -> list[np.ndarray]:
        """Per-layer (edges, 7) operator logits (the same array for every layer without LWAS)."""
        return [self.layer_alphas(l).matrix() for l in range(self.n_layers)]

    @property
    def cell_calls(self) -> Counter:
        """Supercell invocations per (layer, level) since the last reset."""
        return self._calls

    def reset_counters(self) -> None:
        self._calls.clear()

    # -- forward ------------------------------------------------------------
    def stem_forward(self, x: Tensor) -> Tensor:
        return self.stem(x)

    def layer_forward(self, l: int, h_prev: dict[int, Tensor], h_prev2: dict[int, Tensor]) -> dict[int, Tensor]:
        if self.cell_sharing:
            return self.layer_forward_shared(l, h_prev, h_prev2)
        return self.layer_forward_unshared(l, h_prev, h_prev2)

    def _inputs(self, l, i, h_prev, h_prev2):
        srcs = sources(l, i)
        missing = [k for k in srcs if k not in h_prev]
        if missing or prev2_level(l, i) not in h_prev2:
            raise ValueError(f"layer {l} level {i}: missing input levels")
        f_prev = [self.proj_prev[f"l{l}_i{i}_k{k}"](h_prev[k]) for k in srcs]
        f_prev2 = self.proj_prev2[f"l{l}_i{i}"](h_prev2[prev2_level(l, i)])
        weights = F.softmax(self.beta[f"l{l}_i{i}"])
        return srcs, f_prev, f_prev2, weights

    def layer_forward_shared(self, l: int, h_prev: dict[int, Tensor],
                             h_prev2: dict[int, Tensor]) -> dict[int, Tensor]:
        """Blend projected inputs with ``softmax(beta)``, then run the level's cell once."""
        out = {}
        for i in levels(l):
            _, f_prev, f_prev2, weights = self._inputs(l, i, h_prev, h_prev2)
            mixed = F.weighted_sum(weights, f_prev)
            out[i] = self.cells[f"l{l}_i{i}"](mixed, f_prev2)
            self._calls[(l, i)] += 1
        return out

    def layer_forward_unshared(self, l: int, h_prev: dict[int, Tensor],
                               h_prev2: dict[int, Tensor]) -> dict[int, Tensor]:
        """Run a separate cell per source level and blend the cell outputs."""
        out = {}
        for i in levels(l):
            srcs, f_prev, f_prev2, weights = self._inputs(l, i, h_prev, h_prev2)
            outs = []
            for k, f in zip(srcs, f_prev):
                outs.append(self.cells[f"l{l}_i{i}_k{k}"](f, f_prev2))
                self._calls[(l, i)] += 1
            out[i] = F.weighted_sum(weights, outs)
        return out

    def features(self, x: Tensor) -> dict[int, Tensor]:
        s = self.stem_forward(x)
        stem = {-1: s}
        h_prev2, h_prev = stem, stem
        for l in range(self.n_layers):
            h = self.layer_forward(l, h_prev, h_prev2)
            h_prev2, h_prev = h_prev, h
        return h_prev

    def forward(self, x: Tensor) -> Tensor:
        if self.task.kind == "sr" and x.ndim == 4 and x.shape[1] != 3:
            raise ValueError(f"expected 3 input channels, got {x.shape[1]}")
        h = self.features(x)
        last = self.n_layers - 1
        cat = F.concat_channels([h[i] for i in levels(last)])
        return finish(self.tail(cat), x, self.task)


def net_forward(net: SuperNet, x: Tensor) -> Tensor:
    return net(x)
