"""Confusion graph over categories, accumulated from top-N scores."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from cvtnet.errors import EmptyInputError, ParameterError, ParseError, PathError, SchemaError
from cvtnet.ingest import PredictionRecord

EDGE_EPS = 1e-15

_GRAPH_HEADER = re.compile(r"^#graph\s+C=(\d+)\s*$")


@dataclass(frozen=True, eq=False)
class ConfusionGraph:
    """Symmetric non-negative weighted graph.

    ``weights[i, j]`` is the weight of edge ``{i, j}``; the diagonal holds
    self-loop weights, which only aggregated graphs may carry.
    """

    weights: np.ndarray
    node_labels: tuple[str, ...] = ()
    allow_self_loops: bool = False

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise SchemaError("weights must be a square matrix")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise SchemaError("weights must be finite and non-negative")
        if not np.array_equal(w, w.T):
            raise SchemaError("weights must be exactly symmetric")
        if not self.allow_self_loops and np.any(np.diag(w) != 0):
            raise SchemaError("confusion graphs have a zero diagonal")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        labels = tuple(self.node_labels) or tuple(str(i) for i in range(w.shape[0]))
        if len(labels) != w.shape[0]:
            raise SchemaError("one label per node is required")
        object.__setattr__(self, "node_labels", labels)

    @property
    def num_nodes(self) -> int:
        return self.weights.shape[0]

    def adjacency(self) -> np.ndarray:
        """Adjacency with self-loops counted twice, so row sums are degrees."""
        a = self.weights.copy()
        a[np.diag_indices_from(a)] *= 2.0
        return a

    def total_weight(self) -> float:
        """Sum of edge weights, each unordered pair (and self-loop) once."""
        return math.fsum(np.triu(self.weights).ravel())

    def edges(self, eps: float = EDGE_EPS):
        """Yield ``(i, j, w)`` with ``i < j`` and ``w >= eps``."""
        n = self.num_nodes
        for i in range(n):
            for j in range(i + 1, n):
                w = self.weights[i, j]
                if w >= eps:
                    yield i, j, float(w)


def build_confusion_graph(records: Sequence[PredictionRecord], n_top: int = 5,
                          names: Sequence[str] = ()) -> ConfusionGraph:
    """Accumulate each record's non-true top-``n_top`` probabilities onto
    the edge joining the true category and the confused one.

    Top-N ties go to the lower category index.
    """
    if not records:
        raise EmptyInputError("no prediction records")
    c = len(records[0].scores)
    if not isinstance(n_top, (int, np.integer)) or n_top < 1:
        raise ParameterError("n_top must be a positive integer")
    if n_top > c:
        raise ParameterError(f"n_top={n_top} exceeds the category count {c}")
    upper = np.zeros((c, c))
    for rec in records:
        if len(rec.scores) != c:
            raise SchemaError("records disagree on the category count")
        y = rec.true_label
        if not 0 <= y < c:
            raise SchemaError(f"true_label {y} outside [0, {c})")
        p = rec.probabilities()
        for k in np.argsort(-p, kind="stable")[:n_top]:
            if k != y:
                i, j = (y, k) if y < k else (k, y)
                upper[i, j] += p[k]
    return ConfusionGraph(upper + upper.T, tuple(names))


def write_edge_list(path, g: ConfusionGraph, comments: Iterable[str] = ()) -> None:
    lines = [f"#graph C={g.num_nodes}"] + [f"# {c}" for c in comments]
    lines += [f"{i},{j},{w!r}" for i, j, w in g.edges()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_edge_list(path, names: Sequence[str] = ()) -> ConfusionGraph:
    p = Path(path)
    if not p.is_file():
        raise PathError(f"no such file: {p}")
    lines = p.read_text(encoding="utf-8").splitlines()
    m = _GRAPH_HEADER.match(lines[0].strip()) if lines else None
    if m is None:
        raise ParseError("missing '#graph C=<int>' header", 1)
    c = int(m.group(1))
    w = np.zeros((c, c))
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ParseError(f"malformed edge line {line!r}", lineno)
        try:
            i, j, val = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise ParseError(f"malformed edge line {line!r}", lineno) from None
        if not (0 <= i < j < c):
            raise SchemaError(f"edge ({i},{j}) needs 0 <= i < j < {c}", lineno)
        w[i, j] = w[j, i] = val
    return ConfusionGraph(w, tuple(names))
