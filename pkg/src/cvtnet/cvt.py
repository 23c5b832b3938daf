"""Confusion visual tree: assembly from a hierarchy, relabeling, and I/O.

Levels are 1-based: level 1 is the root and level N holds one leaf per
category. A tree of depth N drives N - 1 network branches.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from cvtnet.community import Hierarchy, Partition
from cvtnet.congraph import ConfusionGraph
from cvtnet.errors import ParseError, PathError, SchemaError, StructureError
from cvtnet.ingest import LabeledSample

_TREE_HEADER = re.compile(r"^#cvt\s+levels=(\d+)\s+C=(\d+)\s*$")
_LABEL_HEADER = re.compile(r"^#multilabel\s+K=(\d+)\s*$")


@dataclass(frozen=True)
class CvtNode:
    node_id: int
    level: int
    parent: int | None
    label_set: frozenset
    display_name: str


@dataclass(frozen=True)
class MultiLevelLabel:
    """Targets for tree levels 2..N, coarse to fine; the last is the fine label."""

    sample_id: str
    targets: tuple[int, ...]


class ConfusionVisualTree:
    """Immutable tree ``T = (V, E, L)`` over ``C`` categories.

    ``nodes`` must be ordered by level; within a level, list order defines
    the target index used for that level's branch.
    """

    def __init__(self, nodes: Sequence[CvtNode]):
        self.nodes: tuple[CvtNode, ...] = tuple(nodes)
        if not self.nodes:
            raise StructureError("a tree needs at least a root")
        self._by_id = {n.node_id: n for n in self.nodes}
        if len(self._by_id) != len(self.nodes):
            raise StructureError("duplicate node ids")
        self.depth = max(n.level for n in self.nodes)
        self._levels: list[list[CvtNode]] = [[] for _ in range(self.depth)]
        for n in self.nodes:
            if n.level < 1:
                raise StructureError("levels start at 1")
            self._levels[n.level - 1].append(n)
        self._validate()
        self.num_classes = len(self._levels[-1])
        # _table[i, l-1]: position of leaf i's ancestor within level l
        self._table = np.zeros((self.num_classes, self.depth), dtype=np.int64)
        for lvl, members in enumerate(self._levels):
            for pos, node in enumerate(members):
                for leaf in node.label_set:
                    self._table[leaf, lvl] = pos

    def _validate(self) -> None:
        roots = [n for n in self.nodes if n.parent is None]
        if len(roots) != 1 or roots[0].level != 1:
            raise StructureError("exactly one root is required, at level 1")
        if any(not lvl for lvl in self._levels):
            raise StructureError("every level needs at least one node")
        children: dict[int, list[CvtNode]] = {n.node_id: [] for n in self.nodes}
        for n in self.nodes:
            if n.parent is None:
                continue
            parent = self._by_id.get(n.parent)
            if parent is None or parent.level != n.level - 1:
                raise StructureError(f"node {n.node_id} must hang from a node one level up")
            children[parent.node_id].append(n)
        leaves = self._levels[-1]
        c = len(leaves)
        if roots[0].label_set != frozenset(range(c)):
            raise StructureError("the root must cover every category")
        for leaf in leaves:
            if len(leaf.label_set) != 1 or children[leaf.node_id]:
                raise StructureError("leaves carry exactly one category and no children")
        if sorted(next(iter(leaf.label_set)) for leaf in leaves) != list(range(c)):
            raise StructureError("leaves must cover categories 0..C-1 once each")
        for n in self.nodes:
            if n.level == self.depth:
                continue
            kids = children[n.node_id]
            if not kids:
                raise StructureError(f"internal node {n.node_id} has no children")
            union: set = set()
            for k in kids:
                if union & k.label_set:
                    raise StructureError(f"children of node {n.node_id} overlap")
                union |= k.label_set
            if union != n.label_set:
                raise StructureError(f"node {n.node_id} label set differs from its children's union")

    @property
    def num_branches(self) -> int:
        return self.depth - 1

    def level(self, level: int) -> tuple[CvtNode, ...]:
        return tuple(self._levels[level - 1])

    def node(self, node_id: int) -> CvtNode:
        return self._by_id[node_id]

    def children(self, node_id: int) -> list[CvtNode]:
        return [n for n in self.nodes if n.parent == node_id]

    def level_sizes(self) -> list[int]:
        """Node counts at levels 2..N (branch head widths)."""
        return [len(lvl) for lvl in self._levels[1:]]

    def ancestor_index(self, fine_label: int, level: int) -> int:
        return int(self._table[fine_label, level - 1])

    def parent_map(self, level: int) -> np.ndarray:
        """For each node at ``level``, the position of its parent one level up."""
        up = {n.node_id: pos for pos, n in enumerate(self._levels[level - 2])}
        return np.array([up[n.parent] for n in self._levels[level - 1]], dtype=np.int64)

    def targets(self, fine_labels) -> np.ndarray:
        """(n, N-1) matrix of per-level target indices for fine labels."""
        fine_labels = np.asarray(fine_labels, dtype=np.int64)
        if fine_labels.size and (fine_labels.min() < 0 or fine_labels.max() >= self.num_classes):
            raise SchemaError("fine label outside the tree's categories")
        return self._table[fine_labels, 1:]

    def __eq__(self, other):
        return isinstance(other, ConfusionVisualTree) and self.nodes == other.nodes

    def __repr__(self):
        return f"ConfusionVisualTree(depth={self.depth}, sizes={[1] + self.level_sizes()})"


def select_levels(partitions: Sequence[Partition], max_internal: int | None) -> list[Partition]:
    """Keep at most ``max_internal`` levels: the finest and the coarsest
    survive, intermediate levels are dropped starting from the coarse side."""
    parts = list(partitions)
    if max_internal is None or len(parts) <= max_internal:
        return parts
    if max_internal <= 0:
        return []
    if max_internal == 1:
        return parts[:1]
    return parts[: max_internal - 1] + [parts[-1]]


def tree_from_partitions(partitions: Sequence[Partition], names: Sequence[str]) -> ConfusionVisualTree:
    """Build a tree from finest-first coarsening partitions of the categories.

    A coarsest partition with a single community is the root itself.
    """
    names = list(names)
    c = len(names)
    if c == 0:
        raise StructureError("no category names")
    parts = [p for p in partitions]
    for p in parts:
        if p.num_nodes != c:
            raise StructureError(f"partition covers {p.num_nodes} nodes, expected {c}")
    if parts and parts[-1].num_communities == 1:
        parts = parts[:-1]
    internal = list(reversed(parts))  # coarse to fine
    depth = len(internal) + 2
    nodes: list[CvtNode] = [CvtNode(0, 1, None, frozenset(range(c)), "L1-C0")]
    parent_of_leaf = np.zeros(c, dtype=np.int64)  # node id of each category's current ancestor
    next_id = 1
    for offset, p in enumerate(internal):
        level = offset + 2
        new_parent = np.zeros(c, dtype=np.int64)
        for cid, members in enumerate(p.communities()):
            parents = {int(parent_of_leaf[m]) for m in members}
            if len(parents) != 1:
                raise StructureError(f"level {level} is not nested in the level above")
            nodes.append(CvtNode(next_id, level, parents.pop(), frozenset(members), f"L{level}-C{cid}"))
            new_parent[members] = next_id
            next_id += 1
        parent_of_leaf = new_parent
    for i, name in enumerate(names):
        if "," in name or "\n" in name:
            raise StructureError(f"category name {name!r} contains a separator")
        nodes.append(CvtNode(next_id + i, depth, int(parent_of_leaf[i]), frozenset([i]), name))
    return ConfusionVisualTree(nodes)


def build_cvt(h: Hierarchy, names: Sequence[str], max_depth: int | None = None) -> ConfusionVisualTree:
    """Tree whose internal levels are the hierarchy's levels, coarsest on top.

    ``max_depth`` caps the tree depth (root and leaves included).
    """
    if len(h) == 0:
        raise StructureError("hierarchy has no levels")
    if h.num_nodes != len(names):
        raise StructureError(f"hierarchy covers {h.num_nodes} nodes but {len(names)} names were given")
    parts = list(h.levels)
    if parts[-1].num_communities == 1:
        parts = parts[:-1]
    if max_depth is not None:
        if max_depth < 2:
            raise StructureError("a tree needs at least 2 levels")
        parts = select_levels(parts, max_depth - 2)
    return tree_from_partitions(parts, names)


def flat_tree(names: Sequence[str]) -> ConfusionVisualTree:
    """Root directly over the leaves."""
    return tree_from_partitions([], names)


def relabel(samples: Sequence[LabeledSample], t: ConfusionVisualTree) -> list[MultiLevelLabel]:
    if not samples:
        return []
    table = t.targets([s.fine_label for s in samples])
    return [MultiLevelLabel(s.sample_id, tuple(int(v) for v in row)) for s, row in zip(samples, table)]


def level_sizes(t: ConfusionVisualTree) -> list[int]:
    return t.level_sizes()


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def export_dot(t: ConfusionVisualTree) -> str:
    lines = ["digraph cvt {", "  rankdir=TB;"]
    for n in t.nodes:
        shape = "box" if n.level == t.depth else "ellipse"
        lines.append(f'  n{n.node_id} [label="{_dot_escape(n.display_name)}", shape={shape}];')
    for n in t.nodes:
        if n.parent is not None:
            lines.append(f"  n{n.parent} -> n{n.node_id};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def graph_to_dot(g: ConfusionGraph) -> str:
    """Undirected DOT rendering of a confusion graph, pen width scaled by weight."""
    edges = list(g.edges())
    top = max((w for *_, w in edges), default=1.0)
    lines = ["graph confusion {"]
    for i, name in enumerate(g.node_labels):
        lines.append(f'  n{i} [label="{_dot_escape(name)}"];')
    for i, j, w in edges:
        lines.append(f'  n{i} -- n{j} [weight={w!r}, penwidth={0.5 + 4.5 * w / top:.3f}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def serialize_tree(t: ConfusionVisualTree, comments: Iterable[str] = ()) -> str:
    lines = [f"#cvt levels={t.depth} C={t.num_classes}"] + [f"# {c}" for c in comments]
    for n in t.nodes:
        parent = -1 if n.parent is None else n.parent
        labels = ";".join(str(v) for v in sorted(n.label_set))
        lines.append(f"{n.node_id},{n.level},{parent},{n.display_name},{labels}")
    return "\n".join(lines) + "\n"


def deserialize_tree(text: str) -> ConfusionVisualTree:
    lines = text.splitlines()
    m = _TREE_HEADER.match(lines[0].strip()) if lines else None
    if m is None:
        raise ParseError("missing '#cvt levels=<N> C=<C>' header", 1)
    depth, c = int(m.group(1)), int(m.group(2))
    nodes = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise ParseError(f"malformed node line {line!r}", lineno)
        try:
            node_id, level, parent = int(parts[0]), int(parts[1]), int(parts[2])
            labels = frozenset(int(v) for v in parts[4].split(";") if v)
        except ValueError:
            raise ParseError(f"malformed node line {line!r}", lineno) from None
        nodes.append(CvtNode(node_id, level, None if parent < 0 else parent, labels, parts[3]))
    nodes.sort(key=lambda n: n.level)
    t = ConfusionVisualTree(nodes)
    if t.depth != depth or t.num_classes != c:
        raise SchemaError("tree header disagrees with its nodes")
    return t


def write_tree(path, t: ConfusionVisualTree, comments: Iterable[str] = ()) -> None:
    Path(path).write_text(serialize_tree(t, comments), encoding="utf-8")


def load_tree(path) -> ConfusionVisualTree:
    p = Path(path)
    if not p.is_file():
        raise PathError(f"no such file: {p}")
    return deserialize_tree(p.read_text(encoding="utf-8"))


def write_labels(path, labels: Sequence[MultiLevelLabel], num_branches: int,
                 comments: Iterable[str] = ()) -> None:
    lines = [f"#multilabel K={num_branches}"] + [f"# {c}" for c in comments]
    for lab in labels:
        if len(lab.targets) != num_branches:
            raise SchemaError(f"sample {lab.sample_id!r} has {len(lab.targets)} targets, expected {num_branches}")
        lines.append(",".join([lab.sample_id, *map(str, lab.targets)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_labels(path) -> list[MultiLevelLabel]:
    p = Path(path)
    if not p.is_file():
        raise PathError(f"no such file: {p}")
    lines = p.read_text(encoding="utf-8").splitlines()
    m = _LABEL_HEADER.match(lines[0].strip()) if lines else None
    if m is None:
        raise ParseError("missing '#multilabel K=<K>' header", 1)
    k = int(m.group(1))
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != k + 1:
            raise SchemaError(f"expected {k} targets", lineno)
        try:
            out.append(MultiLevelLabel(parts[0], tuple(int(v) for v in parts[1:])))
        except ValueError:
            raise ParseError(f"malformed label line {line!r}", lineno) from None
    return out
