"""Score records, labeled samples, and the planted-hierarchy generator.

File formats (UTF-8, ``.`` decimal separator, extra ``#`` lines after the
header are comments):

score records::

    #manifest C=<int> normalized=<true|false>
    sample_id,true_label,score_0,...,score_{C-1}

labeled samples::

    #manifest C=<int> dim=<int>
    sample_id,fine_label,f_0,...,f_{dim-1}

category names: one name per line, line index is the category index.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from cvtnet.errors import NumericInputError, ParseError, PathError, SchemaError, SpecError

RECORD_DIGITS = 9
FEATURE_DIGITS = 17

_RECORD_HEADER = re.compile(r"^#manifest\s+C=(\d+)\s+normalized=(true|false)\s*$")
_SAMPLE_HEADER = re.compile(r"^#manifest\s+C=(\d+)\s+dim=(\d+)\s*$")


@dataclass(frozen=True)
class PredictionRecord:
    sample_id: str
    true_label: int
    scores: tuple[float, ...]
    normalized: bool = True

    def probabilities(self) -> np.ndarray:
        v = np.asarray(self.scores, dtype=np.float64)
        return v if self.normalized else softmax(v)


@dataclass(frozen=True)
class LabeledSample:
    sample_id: str
    fine_label: int
    features: tuple[float, ...]


@dataclass(frozen=True)
class DatasetManifest:
    category_names: tuple[str, ...]
    feature_dim: int
    sample_count: int

    def __post_init__(self):
        if len(self.category_names) < 2:
            raise SchemaError("a dataset needs at least 2 categories")
        if len(set(self.category_names)) != len(self.category_names):
            raise SchemaError("category names must be unique")
        if self.feature_dim < 1:
            raise SchemaError("feature_dim must be positive")
        if self.sample_count < 0:
            raise SchemaError("sample_count must be non-negative")

    @property
    def num_classes(self) -> int:
        return len(self.category_names)


def softmax(v) -> np.ndarray:
    """Softmax over the last axis with max subtraction.

    Accepts a vector or a batch of row vectors.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or v.shape[-1] == 0:
        raise NumericInputError("softmax of an empty vector")
    if not np.all(np.isfinite(v)):
        raise NumericInputError("softmax input contains NaN or Inf")
    z = np.exp(v - v.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _fmt(x: float, digits: int) -> str:
    return format(float(x), f".{digits}g")


def _read_lines(path) -> list[str]:
    p = Path(path)
    if not p.is_file():
        raise PathError(f"no such file: {p}")
    return p.read_text(encoding="utf-8").splitlines()


def _check_record(rec: PredictionRecord, c: int, lineno: int | None = None) -> None:
    if len(rec.scores) != c:
        raise SchemaError(f"expected {c} scores, got {len(rec.scores)}", lineno)
    if not 0 <= rec.true_label < c:
        raise SchemaError(f"true_label {rec.true_label} outside [0, {c})", lineno)
    if not all(math.isfinite(s) for s in rec.scores):
        raise SchemaError("non-finite score", lineno)
    if rec.normalized:
        if any(s < 0.0 or s > 1.0 for s in rec.scores):
            raise SchemaError("normalized scores must lie in [0, 1]", lineno)
        if abs(math.fsum(rec.scores) - 1.0) > 1e-6:
            raise SchemaError("normalized scores must sum to 1", lineno)


def _split_row(line: str, lineno: int, min_fields: int) -> list[str]:
    parts = [p.strip() for p in line.split(",")]
    if len(parts) < min_fields or not parts[0]:
        raise ParseError(f"malformed line {line!r}", lineno)
    return parts


def _parse_int(text: str, lineno: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"expected an integer, got {text!r}", lineno) from None


def _parse_floats(parts: Sequence[str], lineno: int) -> tuple[float, ...]:
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise ParseError("malformed number", lineno) from None


def load_records(path) -> list[PredictionRecord]:
    c, _, records = load_records_with_manifest(path)
    return records


def load_records_with_manifest(path) -> tuple[int, bool, list[PredictionRecord]]:
    """Return ``(C, normalized, records)`` parsed from a score-record file."""
    lines = _read_lines(path)
    if not lines:
        raise ParseError("missing manifest header", 1)
    m = _RECORD_HEADER.match(lines[0].strip())
    if m is None:
        raise ParseError(f"bad manifest header {lines[0]!r}", 1)
    c = int(m.group(1))
    normalized = m.group(2) == "true"
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = _split_row(line, lineno, 3)
        rec = PredictionRecord(
            sample_id=parts[0],
            true_label=_parse_int(parts[1], lineno),
            scores=_parse_floats(parts[2:], lineno),
            normalized=normalized,
        )
        _check_record(rec, c, lineno)
        records.append(rec)
    return c, normalized, records


def write_records(path, records: Sequence[PredictionRecord], num_classes: int | None = None,
                  normalized: bool | None = None, comments: Iterable[str] = ()) -> None:
    if num_classes is None:
        if not records:
            raise SchemaError("num_classes is required when writing zero records")
        num_classes = len(records[0].scores)
    if normalized is None:
        normalized = records[0].normalized if records else True
    out = [f"#manifest C={num_classes} normalized={'true' if normalized else 'false'}"]
    out += [f"# {c}" for c in comments]
    for rec in records:
        if rec.normalized != normalized:
            raise SchemaError("records mix normalized and raw scores")
        _check_record(rec, num_classes)
        if "," in rec.sample_id:
            raise SchemaError(f"sample_id {rec.sample_id!r} contains a comma")
        scores = ",".join(_fmt(s, RECORD_DIGITS) for s in rec.scores)
        out.append(f"{rec.sample_id},{rec.true_label},{scores}")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def load_samples(path) -> tuple[int, int, list[LabeledSample]]:
    """Return ``(C, dim, samples)`` parsed from a labeled-sample file."""
    lines = _read_lines(path)
    if not lines:
        raise ParseError("missing manifest header", 1)
    m = _SAMPLE_HEADER.match(lines[0].strip())
    if m is None:
        raise ParseError(f"bad manifest header {lines[0]!r}", 1)
    c, dim = int(m.group(1)), int(m.group(2))
    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = _split_row(line, lineno, 3)
        label = _parse_int(parts[1], lineno)
        feats = _parse_floats(parts[2:], lineno)
        if len(feats) != dim:
            raise SchemaError(f"expected {dim} features, got {len(feats)}", lineno)
        if not 0 <= label < c:
            raise SchemaError(f"fine_label {label} outside [0, {c})", lineno)
        samples.append(LabeledSample(parts[0], label, feats))
    return c, dim, samples


def write_samples(path, samples: Sequence[LabeledSample], num_classes: int, dim: int,
                  comments: Iterable[str] = ()) -> None:
    out = [f"#manifest C={num_classes} dim={dim}"]
    out += [f"# {c}" for c in comments]
    for s in samples:
        if len(s.features) != dim:
            raise SchemaError(f"sample {s.sample_id!r} has {len(s.features)} features, expected {dim}")
        feats = ",".join(_fmt(v, FEATURE_DIGITS) for v in s.features)
        out.append(f"{s.sample_id},{s.fine_label},{feats}")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def load_names(path) -> list[str]:
    names = [line.strip() for line in _read_lines(path)]
    while names and not names[-1]:
        names.pop()
    if any(not n for n in names):
        raise SchemaError("empty category name")
    if len(set(names)) != len(names):
        raise SchemaError("category names must be unique")
    return names


def write_names(path, names: Sequence[str]) -> None:
    Path(path).write_text("".join(f"{n}\n" for n in names), encoding="utf-8")


def as_arrays(samples: Sequence[LabeledSample]) -> tuple[np.ndarray, np.ndarray]:
    """Stack samples into a float feature matrix and an int label vector."""
    if not samples:
        return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
    x = np.array([s.features for s in samples], dtype=np.float64)
    y = np.array([s.fine_label for s in samples], dtype=np.int64)
    return x, y


# --- planted hierarchies -------------------------------------------------


@dataclass(frozen=True)
class PlantedSpec:
    """A balanced tree of branching factors with Gaussian leaves.

    ``branching=(2, 4)`` means 2 coarse groups of 4 fine categories each.
    Offsets shrink by ``ratio`` per level, so sibling leaves are always
    closer to each other than to any non-sibling.
    """

    branching: tuple[int, ...]
    samples_per_leaf: int
    separation: float = 10.0
    noise: float = 1.0
    dim: int | None = None
    ratio: float = 0.5

    def __post_init__(self):
        if not self.branching or any(int(b) < 1 for b in self.branching):
            raise SpecError("branching factors must be positive")
        if self.noise <= 0:
            raise SpecError("noise scale must be positive")
        if self.separation <= 0:
            raise SpecError("separation must be positive")
        if not 0 < self.ratio < 1:
            raise SpecError("ratio must be in (0, 1)")
        if self.samples_per_leaf < 0:
            raise SpecError("samples_per_leaf must be non-negative")
        if self.dim is not None and self.dim < self.node_count:
            raise SpecError(f"dim must be at least {self.node_count} for this tree")

    @property
    def num_leaves(self) -> int:
        return int(np.prod(self.branching))

    @property
    def node_count(self) -> int:
        """Number of non-root tree nodes."""
        return int(sum(np.prod(self.branching[: d + 1]) for d in range(len(self.branching))))


@dataclass(frozen=True)
class PlantedTree:
    """Ground truth of a planted hierarchy.

    ``paths[i]`` is leaf ``i``'s ancestor index at each depth below the root,
    coarse to fine; the last entry is ``i`` itself.
    """

    branching: tuple[int, ...]
    names: tuple[str, ...]
    paths: np.ndarray = field(repr=False)

    @property
    def depth(self) -> int:
        """Number of tree levels including root and leaves."""
        return len(self.branching) + 1

    def partitions(self) -> list[np.ndarray]:
        """Internal-level assignments over leaves, finest first."""
        return [self.paths[:, d].copy() for d in range(len(self.branching) - 2, -1, -1)]


def planted_paths(branching: Sequence[int]) -> np.ndarray:
    branching = [int(b) for b in branching]
    n_leaves = int(np.prod(branching))
    leaves = np.arange(n_leaves)
    cols = []
    for d in range(len(branching)):
        below = int(np.prod(branching[d + 1:]))
        cols.append(leaves // below)
    return np.stack(cols, axis=1)


def _random_rotation(rng: np.random.Generator, dim: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def planted_means(spec: PlantedSpec, rng: np.random.Generator) -> np.ndarray:
    """Leaf means: each non-root node owns one axis; offsets shrink per level."""
    dim = spec.dim or spec.node_count
    paths = planted_paths(spec.branching)
    means = np.zeros((spec.num_leaves, dim))
    axis_base = 0
    for d in range(len(spec.branching)):
        scale = spec.separation * spec.ratio ** d
        means[np.arange(spec.num_leaves), axis_base + paths[:, d]] += scale
        axis_base += int(paths[:, d].max()) + 1
    return means @ _random_rotation(rng, dim).T


def generate_synthetic(spec: PlantedSpec, seed: int):
    """Sample a planted-hierarchy dataset.

    Returns ``(manifest, samples, truth)``; a pure function of
    ``(spec, seed)``.
    """
    rng = np.random.default_rng(seed)
    paths = planted_paths(spec.branching)
    c = spec.num_leaves
    names = tuple(f"leaf{i}" for i in range(c))
    means = planted_means(spec, rng)
    dim = means.shape[1]
    n = spec.samples_per_leaf
    labels = np.repeat(np.arange(c), n)
    x = means[labels] + spec.noise * rng.standard_normal((c * n, dim))
    samples = [
        LabeledSample(f"s{i}", int(labels[i]), tuple(float(v) for v in x[i]))
        for i in range(c * n)
    ]
    manifest = DatasetManifest(names, dim, len(samples))
    return manifest, samples, PlantedTree(tuple(spec.branching), names, paths)


def train_test_split(samples: Sequence[LabeledSample], test_fraction: float, seed: int):
    """Deterministic per-class split; returns ``(train, test)`` in input order."""
    if not 0 <= test_fraction < 1:
        raise SpecError("test_fraction must be in [0, 1)")
    rng = np.random.default_rng(seed)
    by_label: dict[int, list[int]] = {}
    for idx, s in enumerate(samples):
        by_label.setdefault(s.fine_label, []).append(idx)
    test_idx = set()
    for label in sorted(by_label):
        idxs = by_label[label]
        k = int(round(test_fraction * len(idxs)))
        picked = rng.permutation(len(idxs))[:k]
        test_idx.update(idxs[p] for p in picked)
    train = [s for i, s in enumerate(samples) if i not in test_idx]
    test = [s for i, s in enumerate(samples) if i in test_idx]
    return train, test
