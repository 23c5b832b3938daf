"""Branch network: shared base layers, tapped branches, per-level heads."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from cvtnet.errors import NumericError, ShapeError
from cvtnet.ingest import softmax
from cvtnet.vtnet import losses
from cvtnet.vtnet.layers import FLATTEN, POOL, RELU, LayerSpec, affine, build_layer, conv

FINE_LOSS_MODES = ("literal", "log_f")


@dataclass(frozen=True)
class VTNetConfig:
    """Architecture contract.

    Branch ``k`` (1-based, ``k < K``) reads the output of base layer
    ``taps[k-1]``; the fine branch ``K`` reads the top of the base. Every
    branch runs its own ``branch_stack`` followed by an affine head of width
    ``head_sizes[k-1]``. ``parent_map`` sends each fine category to its
    parent among the ``head_sizes[K-2]`` nodes of the level above.
    """

    input_shape: tuple[int, ...]
    base: tuple[LayerSpec, ...]
    taps: tuple[int, ...]
    branch_stacks: tuple[tuple[LayerSpec, ...], ...]
    head_sizes: tuple[int, ...]
    parent_map: tuple[int, ...] = ()
    loss_weights: tuple[float, ...] = ()
    fine_loss: str = "literal"
    seed: int = 0
    init: str = "he"

    def __post_init__(self):
        k = len(self.head_sizes)
        if k < 1:
            raise ShapeError("at least one branch is required")
        if len(self.taps) != k - 1:
            raise ShapeError(f"{k} branches need {k - 1} taps, got {len(self.taps)}")
        if len(self.branch_stacks) != k:
            raise ShapeError(f"{k} branches need {k} branch stacks, got {len(self.branch_stacks)}")
        if not self.base:
            raise ShapeError("base needs at least one layer")
        if any(not 0 <= t < len(self.base) for t in self.taps):
            raise ShapeError("taps must index base layers")
        if any(b < a for a, b in zip(self.taps, self.taps[1:])):
            raise ShapeError("taps must be non-decreasing from coarse to fine")
        if k > 1:
            if len(self.parent_map) != self.head_sizes[-1]:
                raise ShapeError("parent_map needs one entry per fine category")
            if min(self.parent_map) < 0 or max(self.parent_map) >= self.head_sizes[-2]:
                raise ShapeError("parent_map points outside the level above")
        if self.loss_weights and (len(self.loss_weights) != k or min(self.loss_weights) < 0):
            raise ShapeError(f"loss_weights must be {k} non-negative values")
        if self.fine_loss not in FINE_LOSS_MODES:
            raise ShapeError(f"fine_loss must be one of {FINE_LOSS_MODES}")
        if self.init not in ("he", "zeros"):
            raise ShapeError("init must be 'he' or 'zeros'")

    @property
    def num_branches(self) -> int:
        return len(self.head_sizes)

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "base": [s.to_dict() for s in self.base],
            "taps": list(self.taps),
            "branch_stacks": [[s.to_dict() for s in st] for st in self.branch_stacks],
            "head_sizes": list(self.head_sizes),
            "parent_map": list(self.parent_map),
            "loss_weights": list(self.loss_weights),
            "fine_loss": self.fine_loss,
            "seed": self.seed,
            "init": self.init,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            input_shape=tuple(d["input_shape"]),
            base=tuple(LayerSpec.from_dict(s) for s in d["base"]),
            taps=tuple(d["taps"]),
            branch_stacks=tuple(tuple(LayerSpec.from_dict(s) for s in st) for st in d["branch_stacks"]),
            head_sizes=tuple(d["head_sizes"]),
            parent_map=tuple(d.get("parent_map", ())),
            loss_weights=tuple(d.get("loss_weights", ())),
            fine_loss=d.get("fine_loss", "literal"),
            seed=int(d.get("seed", 0)),
            init=d.get("init", "he"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _tree_heads(tree):
    sizes = tuple(tree.level_sizes())
    parent_map = tuple(tree.parent_map(tree.depth).tolist()) if len(sizes) > 1 else ()
    return sizes, parent_map


def mlp_config(tree, input_dim: int, width: int = 64, seed: int = 0, **kw) -> VTNetConfig:
    """Feature-vector network: one (affine, relu) base block per branch;
    coarse branch ``k`` taps block ``k``, each branch adds two FC layers."""
    sizes, parent_map = _tree_heads(tree)
    k = len(sizes)
    base = []
    for _ in range(k):
        base += [affine(width), RELU]
    taps = tuple(2 * b + 1 for b in range(k - 1))
    stack = (affine(width), RELU, affine(width), RELU)
    return VTNetConfig((input_dim,), tuple(base), taps, (stack,) * k, sizes, parent_map, seed=seed, **kw)


def conv_config(tree, input_shape: Sequence[int], channels: int = 8, width: int = 32,
                seed: int = 0, **kw) -> VTNetConfig:
    """Image-shaped network: conv/pool base blocks, branches of two convs and
    two FC layers, mirroring the full-size layout at toy widths."""
    sizes, parent_map = _tree_heads(tree)
    k = len(sizes)
    base = []
    h = input_shape[1]
    for b in range(k):
        base += [conv(channels * (b + 1)), RELU]
        if h % 2 == 0 and h > 2:
            base.append(POOL)
            h //= 2
    block_ends = []
    for i, s in enumerate(base):
        if s.kind == "relu":
            j = i + 1 if i + 1 < len(base) and base[i + 1].kind == "maxpool2d" else i
            block_ends.append(j)
    taps = tuple(block_ends[b] for b in range(k - 1))
    stack = (conv(channels), RELU, conv(channels), RELU, FLATTEN, affine(width), RELU, affine(width), RELU)
    return VTNetConfig(tuple(input_shape), tuple(base), taps, (stack,) * k, sizes, parent_map, seed=seed, **kw)


@dataclass
class BranchOutputs:
    logits: list[np.ndarray]
    fine_probs: np.ndarray
    coarse_probs: np.ndarray | None = None
    averaged: np.ndarray | None = None

    @property
    def prediction(self) -> np.ndarray:
        """Final class probabilities: the averaged vector when there is a
        parent level, else the fine softmax."""
        return self.fine_probs if self.averaged is None else self.averaged


@dataclass
class _Trace:
    base: list = field(default_factory=list)
    branches: list = field(default_factory=list)


class VTNet:
    def __init__(self, config: VTNetConfig):
        self.config = config
        self.base = []
        shape = tuple(config.input_shape)
        base_shapes = []
        for i, spec in enumerate(config.base):
            layer = build_layer(spec, f"base.{i}", shape)
            self.base.append(layer)
            shape = layer.out_shape
            base_shapes.append(shape)
        self.branches = []
        k = config.num_branches
        for b in range(k):
            src = config.taps[b] if b < k - 1 else len(config.base) - 1
            shape = base_shapes[src]
            layers = []
            for i, spec in enumerate(config.branch_stacks[b]):
                layer = build_layer(spec, f"branch{b + 1}.{i}", shape)
                layers.append(layer)
                shape = layer.out_shape
            head = build_layer(affine(config.head_sizes[b]), f"branch{b + 1}.head", shape)
            layers.append(head)
            self.branches.append(layers)
        self._sources = [config.taps[b] if b < k - 1 else len(config.base) - 1 for b in range(k)]
        flat_dim = int(np.prod(config.input_shape))
        # fixed input standardization, not trained
        self.input_mean = np.zeros(flat_dim)
        self.input_scale = np.ones(flat_dim)
        self.reset_parameters()

    # --- parameters -------------------------------------------------------

    def layers(self):
        yield from self.base
        for br in self.branches:
            yield from br

    def reset_parameters(self):
        """He-uniform weights and zero biases, one seed stream per layer.

        A layer spec's own ``seed`` overrides the stream derived from the
        config seed and the layer's position.
        """
        specs = list(self.config.base)
        for stack in self.config.branch_stacks:
            specs += list(stack) + [None]
        for idx, (layer, spec) in enumerate(zip(self.layers(), specs)):
            if spec is not None and spec.seed is not None:
                rng = np.random.default_rng(spec.seed)
            else:
                rng = np.random.default_rng(np.random.SeedSequence([self.config.seed, idx]))
            layer.init(rng, self.config.init)

    def named_parameters(self):
        """Ordered ``(name, array)`` pairs; arrays are live views."""
        for layer in self.layers():
            for key in sorted(layer.params):
                yield f"{layer.name}.{key}", layer.params[key]

    def parameters(self) -> dict[str, np.ndarray]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for _, p in self.named_parameters()]) if self.num_parameters() else np.zeros(0)

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.num_parameters():
            raise ShapeError(f"expected {self.num_parameters()} parameters, got {flat.size}")
        pos = 0
        for _, p in self.named_parameters():
            p[...] = flat[pos:pos + p.size].reshape(p.shape)
            pos += p.size

    def branch_parameter_names(self, branch: int) -> list[str]:
        """Names of parameters owned by branch ``branch`` (1-based) alone."""
        prefix = f"branch{branch}."
        return [n for n, _ in self.named_parameters() if n.startswith(prefix)]

    # --- forward / backward -------------------------------------------------

    def fit_input_scaling(self, x) -> None:
        """Standardize inputs with per-feature mean and std of ``x``."""
        x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
        if x.shape[1] != self.input_mean.size:
            raise ShapeError(f"expected {self.input_mean.size} input features, got {x.shape[1]}")
        self.input_mean = x.mean(axis=0)
        sd = x.std(axis=0)
        self.input_scale = np.where(sd > 0, sd, 1.0)

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        want = tuple(self.config.input_shape)
        if x.ndim < 2 or int(np.prod(x.shape[1:])) != self.input_mean.size:
            raise ShapeError(f"input shape {x.shape[1:]} does not match {want}")
        if x.ndim == 2 and len(want) > 1:
            x = x.reshape((x.shape[0],) + want)
        if x.shape[1:] != want:
            raise ShapeError(f"input shape {x.shape[1:]} does not match {want}")
        flat = (x.reshape(len(x), -1) - self.input_mean) / self.input_scale
        return flat.reshape(x.shape)

    def _forward(self, x, trace: _Trace | None):
        x = self._check_input(x)
        acts = []
        h = x
        for layer in self.base:
            h, cache = layer.forward(h)
            acts.append(h)
            if trace is not None:
                trace.base.append(cache)
        logits = []
        for b, layers in enumerate(self.branches):
            h = acts[self._sources[b]]
            caches = []
            for layer in layers:
                h, cache = layer.forward(h)
                caches.append(cache)
            logits.append(h)
            if trace is not None:
                trace.branches.append(caches)
        fine_probs = softmax(logits[-1])
        if len(logits) == 1:
            return BranchOutputs(logits, fine_probs)
        coarse_probs = softmax(logits[-2])
        averaged = losses.prob_average(coarse_probs, fine_probs, self.config.parent_map)
        return BranchOutputs(logits, fine_probs, coarse_probs, averaged)

    def forward(self, x) -> BranchOutputs:
        return self._forward(x, None)

    def _weights(self, weights):
        w = tuple(weights) if weights is not None else tuple(self.config.loss_weights)
        if len(w) != self.config.num_branches:
            raise ShapeError(f"need {self.config.num_branches} loss weights, got {len(w)}")
        return w

    def check_targets(self, targets):
        t = np.asarray(targets, dtype=np.int64)
        if t.ndim == 1:
            t = t[:, None]
        if t.ndim != 2 or t.shape[1] != self.config.num_branches:
            raise ShapeError(f"targets need {self.config.num_branches} columns")
        for b, size in enumerate(self.config.head_sizes):
            if t.size and (t[:, b].min() < 0 or t[:, b].max() >= size):
                raise ShapeError(f"branch {b + 1} target outside [0, {size})")
        return t

    def losses(self, out: BranchOutputs, targets, weights=None) -> tuple[float, float]:
        """``(coarse, fine)`` loss values for a forward result."""
        w = self._weights(weights)
        t = self.check_targets(targets)
        k = self.config.num_branches
        coarse = losses.coarse_loss(out.logits[:-1], [t[:, b] for b in range(k - 1)], w[:-1])
        if k == 1:
            # no parent level to average with: the fine loss is plain cross-entropy
            fine = w[-1] * losses.cross_entropy(out.logits[-1], t[:, -1])
        else:
            fine = losses.fine_loss(out.averaged, t[:, -1], w[-1], self.config.fine_loss)
        return coarse, fine

    def loss(self, x, targets, weights=None) -> float:
        c, f = self.losses(self.forward(x), targets, weights)
        return c + f

    def loss_and_grads(self, x, targets, weights=None):
        """Forward, both losses, and reverse-mode gradients for every parameter.

        Returns ``(total_loss, outputs, grads)`` with ``grads`` keyed like
        :meth:`named_parameters`.
        """
        w = self._weights(weights)
        t = self.check_targets(targets)
        trace = _Trace()
        out = self._forward(x, trace)
        coarse, fine = self.losses(out, t, w)
        k = self.config.num_branches
        d_logits = losses.coarse_loss_grad(out.logits[:-1], [t[:, b] for b in range(k - 1)], w[:-1])
        if k == 1:
            d_logits.append(w[-1] * losses.cross_entropy_grad(out.logits[-1], t[:, -1]))
        else:
            d_f = losses.fine_loss_grad(out.averaged, t[:, -1], w[-1], self.config.fine_loss)
            d_coarse_p, d_fine_p = losses.prob_average_grad(d_f, out.coarse_probs, out.fine_probs,
                                                            self.config.parent_map)
            d_logits[-1] = d_logits[-1] + losses.softmax_grad(out.coarse_probs, d_coarse_p)
            d_logits.append(losses.softmax_grad(out.fine_probs, d_fine_p))

        grads: dict[str, np.ndarray] = {}
        tap_grads: dict[int, np.ndarray] = {}
        for b in range(k - 1, -1, -1):
            d = d_logits[b]
            for layer, cache in zip(reversed(self.branches[b]), reversed(trace.branches[b])):
                d = self._backward_layer(layer, d, cache, grads)
            src = self._sources[b]
            tap_grads[src] = tap_grads[src] + d if src in tap_grads else d
        d = None
        for i in range(len(self.base) - 1, -1, -1):
            if i in tap_grads:
                d = tap_grads[i] if d is None else d + tap_grads[i]
            d = self._backward_layer(self.base[i], d, trace.base[i], grads)
        ordered = {name: grads[name] for name, _ in self.named_parameters()}
        return coarse + fine, out, ordered

    @staticmethod
    def _backward_layer(layer, d, cache, grads):
        dx, g = layer.backward(d, cache)
        for key, val in g.items():
            if not np.all(np.isfinite(val)):
                raise NumericError(f"non-finite gradient in layer {layer.name} ({key})")
            grads[f"{layer.name}.{key}"] = val
        if not np.all(np.isfinite(dx)):
            raise NumericError(f"non-finite gradient flowing out of layer {layer.name}")
        return dx

    def copy(self) -> "VTNet":
        return self.with_config()

    def with_config(self, **changes) -> "VTNet":
        """Copy with a modified config (same parameter layout required)."""
        other = VTNet(replace(self.config, **changes))
        other.set_flat(self.get_flat())
        other.input_mean = self.input_mean.copy()
        other.input_scale = self.input_scale.copy()
        return other
