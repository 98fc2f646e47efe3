"""Discretisation: genotypes from alpha, width paths from beta, compact networks."""
from __future__ import annotations

import dataclasses
import json
from typing import Sequence

import numpy as np

from . import nn
from .autodiff import Tensor
from .autodiff import functional as F
from .cells import NUM_OPS, OpKind, edge_index, make_candidate_op, num_edges
from .supernet import RestorationTask, Stem, Tail, finish, levels, sources

BRUTE_FORCE_MAX_LAYERS = 12


# ---------------------------------------------------------------------------
# genotypes


@dataclasses.dataclass(frozen=True)
class CellGenotype:
    """Per node, two ``(input_index, OpKind)`` picks. Inputs 0/1 are the cell inputs."""

    n_nodes: int
    picks: tuple[tuple[tuple[int, OpKind], tuple[int, OpKind]], ...]

    def __post_init__(self):
        picks = tuple(tuple((int(j), OpKind(k)) for j, k in node) for node in self.picks)
        object.__setattr__(self, "picks", picks)
        self.validate()

    def validate(self) -> None:
        if len(self.picks) != self.n_nodes:
            raise ValueError(f"{len(self.picks)} nodes listed, expected {self.n_nodes}")
        for i, node in enumerate(self.picks):
            if len(node) != 2:
                raise ValueError(f"node {i} has {len(node)} picks, expected 2")
            inputs = [j for j, _ in node]
            if len(set(inputs)) != 2:
                raise ValueError(f"node {i} picks the same input twice")
            for j, kind in node:
                if not 0 <= j < 2 + i:
                    raise ValueError(f"node {i} input {j} out of range [0, {2 + i})")
                if kind is OpKind.NONE:
                    raise ValueError(f"node {i} picks the 'none' operator")

    def to_json(self) -> dict:
        return {"version": 1, "N": self.n_nodes,
                "picks": [[[j, int(k)] for j, k in node] for node in self.picks]}

    @classmethod
    def from_json(cls, doc: dict) -> CellGenotype:
        if doc.get("version") != 1:
            raise ValueError(f"unsupported genotype version {doc.get('version')!r}")
        return cls(int(doc["N"]), tuple(tuple((j, k) for j, k in node) for node in doc["picks"]))

    def describe(self) -> str:
        return "; ".join(
            f"n{i}=" + "+".join(f"{k.label}({_input_name(j)})" for j, k in node)
            for i, node in enumerate(self.picks))


def _input_name(j: int) -> str:
    return f"in{j}" if j < 2 else f"n{j - 2}"


@dataclasses.dataclass(frozen=True)
class WidthPath:
    levels: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(v) for v in self.levels))
        self.validate()

    def validate(self) -> None:
        if not self.levels:
            raise ValueError("empty width path")
        for l, v in enumerate(self.levels):
            if v not in levels(l):
                raise ValueError(f"level {v} unavailable at layer {l}")
            if l and abs(v - self.levels[l - 1]) > 1:
                raise ValueError(f"width jumps by more than one level at layer {l}")

    def to_json(self) -> dict:
        return {"levels": list(self.levels)}

    @classmethod
    def from_json(cls, doc: dict) -> WidthPath:
        return cls(tuple(doc["levels"]))


@dataclasses.dataclass(frozen=True)
class ReplaceOp:
    node: int
    pick: int
    kind: OpKind


@dataclasses.dataclass(frozen=True)
class RewireInput:
    node: int
    pick: int
    new_input: int


def _softmax_rows(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    e = np.exp(a - a.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def derive_cell(alpha: np.ndarray, n_nodes: int | None = None) -> CellGenotype:
    """Keep, for every node, the two incoming edges whose best non-``none`` op is most probable.

    ``alpha`` has one row of 7 logits per edge in :func:`~hinas.cells.edge_index` order.
    Ties go to the lower input index, then to the lower operator ordinal.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if not np.all(np.isfinite(alpha)):
        raise ValueError("alpha contains non-finite values")
    if n_nodes is None:
        n_nodes = next(n for n in range(1, 64) if num_edges(n) == alpha.shape[0])
    if alpha.shape != (num_edges(n_nodes), NUM_OPS):
        raise ValueError(f"alpha shape {alpha.shape} does not fit {n_nodes} nodes")
    probs = _softmax_rows(alpha)[:, :OpKind.NONE]
    picks = []
    for i in range(n_nodes):
        n_in = 2 + i
        rows = probs[[edge_index(i, j) for j in range(n_in)]]
        best_op = rows.argmax(axis=1)  # first maximum = lowest ordinal
        score = rows.max(axis=1)
        order = sorted(range(n_in), key=lambda j: (-score[j], j))[:2]
        picks.append(tuple((j, OpKind(int(best_op[j]))) for j in sorted(order)))
    return CellGenotype(n_nodes, tuple(picks))


def derive_genotypes(alpha_per_layer: Sequence[np.ndarray], n_nodes: int) -> list[CellGenotype]:
    return [derive_cell(a, n_nodes) for a in alpha_per_layer]


def perturb_genotype(g: CellGenotype, edit: ReplaceOp | RewireInput) -> CellGenotype:
    """Return an edited copy: ``ReplaceOp`` swaps an operator, ``RewireInput`` moves an input."""
    if not 0 <= edit.node < g.n_nodes or edit.pick not in (0, 1):
        raise ValueError(f"no pick {edit.pick} at node {edit.node}")
    picks = [list(node) for node in g.picks]
    j, kind = picks[edit.node][edit.pick]
    if isinstance(edit, ReplaceOp):
        picks[edit.node][edit.pick] = (j, OpKind(edit.kind))
    elif isinstance(edit, RewireInput):
        picks[edit.node][edit.pick] = (edit.new_input, kind)
    else:
        raise TypeError(f"unknown edit {edit!r}")
    return CellGenotype(g.n_nodes, tuple(tuple(node) for node in picks))


# ---------------------------------------------------------------------------
# width decoding


def _log_transitions(beta: Sequence[Sequence[np.ndarray]]) -> list[dict[int, dict[int, float]]]:
    """``out[l][i][k]`` = log softmax(beta[l][i]) at source ``k``."""
    table = []
    for l, per_level in enumerate(beta):
        lv = levels(l)
        if len(per_level) != len(lv):
            raise ValueError(f"layer {l}: {len(per_level)} beta vectors for levels {lv}")
        row = {}
        for i, logits in zip(lv, per_level):
            logits = np.asarray(logits, dtype=np.float64)
            srcs = sources(l, i)
            if logits.shape != (len(srcs),):
                raise ValueError(f"beta[{l}][{i}] has shape {logits.shape}, sources are {srcs}")
            if not np.all(np.isfinite(logits)):
                raise ValueError("beta contains non-finite values")
            m = logits.max()
            logp = logits - m - np.log(np.exp(logits - m).sum())
            row[i] = dict(zip(srcs, logp.tolist()))
        table.append(row)
    return table


def viterbi_widths(beta: Sequence[Sequence[np.ndarray]]) -> WidthPath:
    """Most probable width path; ``beta[l][j]`` holds logits over ``sources(l, levels(l)[j])``.

    Ties are broken toward the lower level, both for predecessors and the final level.
    """
    table = _log_transitions(beta)
    n_layers = len(table)
    score = {i: table[0][i][-1] for i in levels(0)}
    back: list[dict[int, int]] = [{}]
    for l in range(1, n_layers):
        new, ptr = {}, {}
        for i in levels(l):
            best, arg = -np.inf, None
            for k in sorted(table[l][i]):
                s = score[k] + table[l][i][k]
                if s > best:
                    best, arg = s, k
            new[i], ptr[i] = best, arg
        score = new
        back.append(ptr)
    best, last = -np.inf, None
    for i in sorted(score):
        if score[i] > best:
            best, last = score[i], i
    path = [last]
    for l in range(n_layers - 1, 0, -1):
        path.append(back[l][path[-1]])
    return WidthPath(tuple(reversed(path)))


def path_log_prob(beta: Sequence[Sequence[np.ndarray]], path: Sequence[int]) -> float:
    table = _log_transitions(beta)
    total = table[0][path[0]][-1]
    for l in range(1, len(path)):
        total = total + table[l][path[l]][path[l - 1]]
    return total


def all_paths(n_layers: int):
    """Every availability-respecting width path, in lexicographic order."""
    def extend(prefix):
        l = len(prefix)
        if l == n_layers:
            yield tuple(prefix)
            return
        for v in levels(l):
            if l == 0 or abs(v - prefix[-1]) <= 1:
                yield from extend(prefix + [v])
    yield from extend([])


def brute_force_widths(beta: Sequence[Sequence[np.ndarray]]) -> WidthPath:
    """Exhaustive arg-max over all paths (same tie-break as :func:`viterbi_widths`)."""
    n_layers = len(beta)
    if n_layers > BRUTE_FORCE_MAX_LAYERS:
        raise ValueError(f"enumeration bound is {BRUTE_FORCE_MAX_LAYERS} layers, got {n_layers}")
    table = _log_transitions(beta)
    best, best_key, best_path = -np.inf, None, None
    for path in all_paths(n_layers):
        total = table[0][path[0]][-1]
        for l in range(1, n_layers):
            total = total + table[l][path[l]][path[l - 1]]
        # lower levels win ties, compared from the last layer backwards
        key = tuple(reversed(path))
        if total > best or (total == best and key < best_key):
            best, best_key, best_path = total, key, path
    return WidthPath(best_path)


# ---------------------------------------------------------------------------
# random architectures


def random_genotype(seed: int, n_nodes: int, n_layers: int,
                        layerwise: bool = True) -> tuple[list[CellGenotype], WidthPath]:
    """Uniform random genotypes (one per layer, or one shared) and a uniform random path."""
    rng = np.random.default_rng(seed)

    def one() -> CellGenotype:
        picks = []
        for i in range(n_nodes):
            inputs = sorted(rng.choice(2 + i, size=2, replace=False).tolist())
            picks.append(tuple((j, _random_kind(rng)) for j in inputs))
        return CellGenotype(n_nodes, tuple(picks))

    genotypes = [one() for _ in range(n_layers)] if layerwise else [one()] * n_layers
    # uniform path: count completions backwards, then sample forwards
    count = [{i: 1 for i in levels(n_layers - 1)}]
    for l in range(n_layers - 2, -1, -1):
        nxt = count[0]
        count.insert(0, {i: sum(c for j, c in nxt.items() if abs(j - i) <= 1) for i in levels(l)})
    path = []
    for l in range(n_layers):
        opts = [i for i in levels(l) if l == 0 or abs(i - path[-1]) <= 1]
        w = np.array([count[l][i] for i in opts], dtype=np.float64)
        path.append(int(opts[rng.choice(len(opts), p=w / w.sum())]))
    return genotypes, WidthPath(tuple(path))


_CHOOSABLE = tuple(k for k in OpKind if k is not OpKind.NONE)


def _random_kind(rng: np.random.Generator) -> OpKind:
    return _CHOOSABLE[int(rng.integers(len(_CHOOSABLE)))]


# ---------------------------------------------------------------------------
# compact network


class DiscreteCell(nn.Module):
    def __init__(self, genotype: CellGenotype, c: int, rng: np.random.Generator, affine: bool = True,
                 slope: float = nn.LEAKY_SLOPE):
        self.genotype = genotype
        self.c = c
        self.ops = {}
        for i, node in enumerate(genotype.picks):
            for p, (j, kind) in enumerate(node):
                self.ops[f"n{i}_p{p}"] = make_candidate_op(kind, c, rng, affine, slope)

    def forward(self, in1: Tensor, in2: Tensor) -> Tensor:
        states = [in1, in2]
        for i, node in enumerate(self.genotype.picks):
            (j0, _), (j1, _) = node
            a = self.ops[f"n{i}_p0"](states[j0])
            b = self.ops[f"n{i}_p1"](states[j1])
            states.append(F.add(a, b))
        return F.concat_channels(states[2:])


class CompactNet(nn.Module):
    """Stem, one discrete cell per layer at its decoded width, tail."""

    def __init__(self, genotypes: Sequence[CellGenotype], node_widths: Sequence[int], base_width: int,
                 task: RestorationTask, seed: int = 0, affine: bool = True,
                 slope: float = nn.LEAKY_SLOPE):
        if len(genotypes) != len(node_widths):
            raise ValueError("one genotype per layer required")
        n_nodes = genotypes[0].n_nodes
        if any(g.n_nodes != n_nodes for g in genotypes):
            raise ValueError("all genotypes must have the same node count")
        rng = np.random.default_rng(seed)
        self.task = task
        self.base_width = base_width
        self.n_nodes = n_nodes
        self.node_widths = [int(c) for c in node_widths]
        self.genotypes = list(genotypes)
        self.stem = Stem(base_width, rng, slope)
        out_w = [base_width] + [n_nodes * c for c in self.node_widths]  # index 0: stem
        self.proj_prev = []
        self.proj_prev2 = []
        self.cells = []
        for l, (g, c) in enumerate(zip(genotypes, self.node_widths)):
            self.proj_prev.append(nn.Conv2d(out_w[l], c, 1, rng, bias=False))
            self.proj_prev2.append(nn.Conv2d(out_w[max(l - 1, 0)], c, 1, rng, bias=False))
            self.cells.append(DiscreteCell(g, c, rng, affine, slope))
        self.tail = Tail(out_w[-1], base_width * n_nodes, task.out_channels, rng, slope)

    def forward(self, x: Tensor) -> Tensor:
        s = self.stem(x)
        h_prev2, h_prev = s, s
        for l, cell in enumerate(self.cells):
            h = cell(self.proj_prev[l](h_prev), self.proj_prev2[l](h_prev2))
            h_prev2, h_prev = h_prev, h
        return finish(self.tail(h_prev), x, self.task)


def build_compact_net(genotypes: Sequence[CellGenotype], path: WidthPath | None, base_width: int,
                      task: RestorationTask, n_layers: int | None = None,
                      node_widths: Sequence[int] | None = None, seed: int = 0,
                      affine: bool = True, slope: float = nn.LEAKY_SLOPE) -> CompactNet:
    """Instantiate a trainable network from genotypes and a width path.

    Pass ``node_widths`` instead of ``path`` for hand-set widths (e.g. ``[40] * L``,
    or doubling widths ``[20, 40, 80]``). A single genotype is replicated to every layer.
    """
    if (path is None) == (node_widths is None):
        raise ValueError("give exactly one of path or node_widths")
    if path is not None:
        widths = [(2 ** v) * base_width for v in path.levels]
    else:
        widths = [int(c) for c in node_widths]
    n_layers = n_layers or len(widths)
    if len(widths) != n_layers:
        raise ValueError(f"{len(widths)} widths for {n_layers} layers")
    genotypes = list(genotypes)
    if len(genotypes) == 1:
        genotypes = genotypes * n_layers
    if len(genotypes) != n_layers:
        raise ValueError(f"{len(genotypes)} genotypes for {n_layers} layers")
    return CompactNet(genotypes, widths, base_width, task, seed=seed, affine=affine, slope=slope)


def doubling_widths(first: int, n_layers: int) -> list[int]:
    return [first * 2 ** l for l in range(n_layers)]


count_params = nn.count_params


# ---------------------------------------------------------------------------
# export


def genotype_to_dot(g: CellGenotype, name: str = "cell") -> str:
    lines = [f"digraph {name} {{", "  rankdir=LR;",
             '  in0 [shape=box, label="in0"];', '  in1 [shape=box, label="in1"];']
    for i in range(g.n_nodes):
        lines.append(f'  n{i} [shape=circle, label="{i}"];')
    lines.append('  out [shape=box, label="concat"];')
    for i, node in enumerate(g.picks):
        for j, kind in node:
            lines.append(f'  {_input_name(j)} -> n{i} [label="{kind.label}"];')
    for i in range(g.n_nodes):
        lines.append(f"  n{i} -> out;")
    lines.append("}")
    return "\n".join(lines) + "\n"


def save_architecture(path, genotypes: Sequence[CellGenotype], widths: WidthPath) -> None:
    doc = {"genotypes": [g.to_json() for g in genotypes], "path": widths.to_json()}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)


def load_architecture(path) -> tuple[list[CellGenotype], WidthPath]:
    with open(path) as fh:
        doc = json.load(fh)
    return [CellGenotype.from_json(g) for g in doc["genotypes"]], WidthPath.from_json(doc["path"])


