"""Hierarchical Louvain community detection and an exhaustive oracle.

Modularity uses resolution 1::

    Q = sum_c [ in_c / 2m - (tot_c / 2m)^2 ]

where ``in_c`` sums adjacency entries inside community ``c`` (self-loops
counted twice) and ``tot_c`` sums the degrees of its members.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from cvtnet import kernels
from cvtnet.congraph import ConfusionGraph
from cvtnet.errors import ParseError, PathError, SchemaError, SizeError, UndefinedModularityError

MIN_GAIN = 1e-12
ORACLE_MAX_NODES = 12

_LEVEL_LINE = re.compile(r"^level=(\d+)\s+Q=(\S+)\s+assignment=([\d,]+)\s*$")


def canonical_labels(labels) -> np.ndarray:
    """Relabel communities densely in order of first appearance."""
    labels = np.asarray(labels)
    mapping: dict[int, int] = {}
    out = np.empty(len(labels), dtype=np.int64)
    for i, c in enumerate(labels.tolist()):
        out[i] = mapping.setdefault(c, len(mapping))
    return out


@dataclass(frozen=True, eq=False)
class Partition:
    assignment: np.ndarray

    def __post_init__(self):
        a = np.array(self.assignment, dtype=np.int64)
        if a.ndim != 1 or a.size == 0:
            raise SchemaError("a partition assigns at least one node")
        k = int(a.max()) + 1
        if a.min() < 0 or len(np.unique(a)) != k:
            raise SchemaError("community ids must be dense 0..K-1")
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)

    @classmethod
    def from_labels(cls, labels) -> "Partition":
        return cls(canonical_labels(labels))

    @classmethod
    def singletons(cls, n: int) -> "Partition":
        return cls(np.arange(n))

    @property
    def num_nodes(self) -> int:
        return len(self.assignment)

    @property
    def num_communities(self) -> int:
        return int(self.assignment.max()) + 1

    def communities(self) -> list[list[int]]:
        groups: list[list[int]] = [[] for _ in range(self.num_communities)]
        for node, c in enumerate(self.assignment.tolist()):
            groups[c].append(node)
        return groups

    def canonical(self) -> "Partition":
        return Partition(canonical_labels(self.assignment))

    def same_grouping(self, other: "Partition") -> bool:
        """True when both partitions group nodes identically (ids may differ)."""
        return np.array_equal(canonical_labels(self.assignment), canonical_labels(other.assignment))

    def __eq__(self, other):
        return isinstance(other, Partition) and np.array_equal(self.assignment, other.assignment)

    def __hash__(self):
        return hash(self.assignment.tobytes())

    def __repr__(self):
        return f"Partition({self.assignment.tolist()})"


@dataclass(frozen=True, eq=False)
class Hierarchy:
    """Partitions of the original nodes, finest first, one per Louvain pass."""

    levels: tuple[Partition, ...]
    modularities: tuple[float, ...]
    seed: int | None = None

    def __post_init__(self):
        levels = tuple(self.levels)
        qs = tuple(float(q) for q in self.modularities)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "modularities", qs)
        if len(levels) != len(qs):
            raise SchemaError("one modularity value per level is required")
        for t in range(1, len(levels)):
            fine, coarse = levels[t - 1], levels[t]
            if coarse.num_nodes != fine.num_nodes:
                raise SchemaError("levels cover different node sets")
            if coarse.num_communities >= fine.num_communities:
                raise SchemaError(f"level {t} does not reduce the community count")
            # every fine community must map into exactly one coarse community
            pairs = set(zip(fine.assignment.tolist(), coarse.assignment.tolist()))
            if len(pairs) != fine.num_communities:
                raise SchemaError(f"level {t} is not a coarsening of level {t - 1}")
            if qs[t] < qs[t - 1]:
                raise SchemaError(f"modularity decreases at level {t}")

    @property
    def num_nodes(self) -> int:
        return self.levels[0].num_nodes if self.levels else 0

    def __len__(self):
        return len(self.levels)


def _two_m(adj: np.ndarray) -> float:
    two_m = math.fsum(adj.ravel())
    if not two_m > 0:
        raise UndefinedModularityError("modularity is undefined on a graph with zero total weight")
    return two_m


def modularity(g: ConfusionGraph, p: Partition) -> float:
    """Newman modularity of ``p`` on ``g`` (correctly rounded partial sums)."""
    if p.num_nodes != g.num_nodes:
        raise SchemaError("partition and graph sizes differ")
    adj = g.adjacency()
    two_m = _two_m(adj)
    terms = []
    for members in p.communities():
        block = adj[members]
        inner = math.fsum(block[:, members].ravel())
        tot = math.fsum(block.ravel())
        terms.append(inner / two_m)
        terms.append(-((tot / two_m) ** 2))
    return math.fsum(terms)


def louvain_local_pass(g: ConfusionGraph, seed_order: Sequence[int], start: Partition | None = None,
                       min_gain: float = MIN_GAIN, backend: str | None = None) -> Partition:
    """Greedy node moves until a full sweep in ``seed_order`` moves nothing.

    Each node joins the neighbouring community with the largest modularity
    gain (lowest id on ties) when that gain exceeds ``min_gain``.
    """
    n = g.num_nodes
    order = np.asarray(seed_order, dtype=np.int64)
    if sorted(order.tolist()) != list(range(n)):
        raise SchemaError("seed_order must be a permutation of the nodes")
    adj = g.adjacency()
    _two_m(adj)
    init = np.arange(n) if start is None else np.asarray(start.assignment, dtype=np.int64)
    k = kernels if backend is None else kernels.get_backend(backend)
    labels, _ = k.local_move(adj, order, init, min_gain)
    return Partition.from_labels(labels)


def aggregate(g: ConfusionGraph, p: Partition) -> ConfusionGraph:
    """Collapse each community to a node; internal weight becomes a self-loop."""
    if p.num_nodes != g.num_nodes:
        raise SchemaError("partition and graph sizes differ")
    k = p.num_communities
    iu, ju = np.triu_indices(g.num_nodes)
    w = g.weights[iu, ju]
    a = p.assignment[iu]
    b = p.assignment[ju]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    upper = np.zeros((k, k))
    np.add.at(upper, (lo, hi), w)
    out = upper + np.triu(upper, 1).T
    labels = tuple(f"c{c}" for c in range(k))
    return ConfusionGraph(out, labels, allow_self_loops=True)


def louvain_hierarchy(g: ConfusionGraph, seed: int = 0, min_gain: float = MIN_GAIN,
                      backend: str | None = None) -> Hierarchy:
    """Alternate local passes and aggregation; one level per merging pass.

    The seed only drives the node sweep order, which is re-drawn for every
    pass.
    """
    _two_m(g.adjacency())
    rng = np.random.default_rng(seed)
    current = g
    composed = np.arange(g.num_nodes)
    levels: list[Partition] = []
    qs: list[float] = []
    while True:
        order = rng.permutation(current.num_nodes)
        p = louvain_local_pass(current, order, min_gain=min_gain, backend=backend)
        if p.num_communities == current.num_nodes:
            break
        composed = p.assignment[composed]
        level = Partition.from_labels(composed)
        q = modularity(g, level)
        if qs and q - qs[-1] <= min_gain:
            break
        levels.append(level)
        qs.append(q)
        if p.num_communities == 1:
            break
        current = aggregate(current, p)
    return Hierarchy(tuple(levels), tuple(qs), seed)


def enumerate_partitions(n: int) -> np.ndarray:
    """All set partitions of ``n`` nodes as restricted growth strings, in
    lexicographic order (Bell(n) rows)."""
    if n < 1:
        raise SizeError("need at least one node")
    rows = np.zeros((1, 1), dtype=np.int8)
    maxes = np.zeros(1, dtype=np.int8)
    for _ in range(1, n):
        counts = maxes.astype(np.int64) + 2
        rep = np.repeat(np.arange(len(rows)), counts)
        starts = np.repeat(np.cumsum(counts) - counts, counts)
        vals = (np.arange(counts.sum()) - starts).astype(np.int8)
        rows = np.concatenate([rows[rep], vals[:, None]], axis=1)
        maxes = np.maximum(maxes[rep], vals)
    return rows


def brute_force_best_partition(g: ConfusionGraph, tol: float = 1e-12,
                               chunk: int = 20000) -> tuple[Partition, float]:
    """Exhaustive modularity maximum for graphs of at most 12 nodes.

    Among partitions within ``tol`` of the maximum, the lexicographically
    smallest restricted growth string wins.
    """
    n = g.num_nodes
    if n > ORACLE_MAX_NODES:
        raise SizeError(f"exhaustive search supports at most {ORACLE_MAX_NODES} nodes, got {n}")
    adj = g.adjacency()
    two_m = adj.sum()
    if not two_m > 0:
        raise UndefinedModularityError("modularity is undefined on a graph with zero total weight")
    deg = adj.sum(axis=1)
    b = (adj - np.outer(deg, deg) / two_m) / two_m
    rows = enumerate_partitions(n)
    q = np.empty(len(rows))
    for s in range(0, len(rows), chunk):
        part = rows[s:s + chunk]
        same = part[:, :, None] == part[:, None, :]
        q[s:s + chunk] = (same * b).sum(axis=(1, 2))
    best = int(np.flatnonzero(q >= q.max() - tol)[0])
    return Partition(rows[best].astype(np.int64)), float(q[best])


def write_hierarchy(path, h: Hierarchy, comments: Iterable[str] = ()) -> None:
    lines = [f"# {c}" for c in comments]
    for t, (lvl, q) in enumerate(zip(h.levels, h.modularities)):
        lines.append(f"level={t} Q={q!r} assignment={','.join(map(str, lvl.assignment.tolist()))}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_hierarchy(path) -> Hierarchy:
    p = Path(path)
    if not p.is_file():
        raise PathError(f"no such file: {p}")
    levels, qs = [], []
    seed = None
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        if line.startswith("#"):
            m = re.search(r"louvain_seed=(-?\d+)", line) or re.search(r"\bseed=(-?\d+)", line)
            if m:
                seed = int(m.group(1))
            continue
        if not line.strip():
            continue
        m = _LEVEL_LINE.match(line.strip())
        if m is None or int(m.group(1)) != len(levels):
            raise ParseError(f"malformed hierarchy line {line!r}", lineno)
        qs.append(float(m.group(2)))
        levels.append(Partition([int(v) for v in m.group(3).split(",")]))
    return Hierarchy(tuple(levels), tuple(qs), seed)
