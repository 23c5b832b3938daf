"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cvtnet.cvt import tree_from_partitions
from cvtnet.community import Partition
from cvtnet.vtnet.layers import FLATTEN, POOL, RELU, affine, conv
from cvtnet.vtnet.net import VTNet, VTNetConfig

STEP = 1e-5
REL_TOL = 1e-4
ABS_TOL = 1e-7


@dataclass
class GradcheckReport:
    name: str
    max_rel_error: float
    max_abs_error: float
    checked: int
    max_rel_significant: float = 0.0
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def element_error(analytic: float, numeric: float) -> tuple[float, float]:
    abs_err = abs(analytic - numeric)
    scale = max(abs(analytic), abs(numeric))
    return abs_err, (abs_err / scale if scale > 0 else 0.0)


def gradcheck(net: VTNet, x, targets, weights, name: str = "net", h: float = STEP,
              rel_tol: float = REL_TOL, abs_tol: float = ABS_TOL) -> GradcheckReport:
    """Compare every analytic gradient entry with a central difference.

    An entry passes when its relative error is below ``rel_tol`` or its
    absolute error is below ``abs_tol``. ``max_rel_error`` is taken over
    entries that do not pass on the absolute criterion;
    ``max_rel_significant`` over entries whose gradient magnitude is at
    least ``1e-4``.
    """
    _, _, grads = net.loss_and_grads(x, targets, weights)
    analytic = np.concatenate([g.ravel() for g in grads.values()])
    names = [n for n, g in grads.items() for _ in range(g.size)]
    base = net.get_flat()
    max_rel = max_abs = max_sig = 0.0
    failures = []
    try:
        for i in range(base.size):
            probe = base.copy()
            probe[i] = base[i] + h
            net.set_flat(probe)
            up = net.loss(x, targets, weights)
            probe[i] = base[i] - h
            net.set_flat(probe)
            down = net.loss(x, targets, weights)
            numeric = (up - down) / (2 * h)
            abs_err, rel_err = element_error(analytic[i], numeric)
            max_abs = max(max_abs, abs_err)
            if max(abs(analytic[i]), abs(numeric)) >= 1e-4:
                max_sig = max(max_sig, rel_err)
            if abs_err >= abs_tol:
                max_rel = max(max_rel, rel_err)
                if rel_err >= rel_tol:
                    failures.append((names[i], i, float(analytic[i]), float(numeric)))
    finally:
        net.set_flat(base)
    return GradcheckReport(name, max_rel, max_abs, int(base.size), max_sig, failures)


def _tree(branching_partitions, c):
    names = [f"k{i}" for i in range(c)]
    return tree_from_partitions([Partition(p) for p in branching_partitions], names)


def seeded_suite(seed: int = 0):
    """Small nets covering every layer kind, both fine-loss modes, one- to
    three-branch trees and the averaging path. Yields ``(name, net, x, targets, W)``."""
    rng = np.random.default_rng(seed)
    tree1 = _tree([], 4)
    tree2 = _tree([[0, 0, 1, 1, 2, 2]], 6)
    tree3 = _tree([[0, 0, 1, 1, 2, 2, 3, 3], [0, 0, 0, 0, 1, 1, 1, 1]], 8)

    def jitter(net):
        # nonzero biases keep every ReLU input away from its kink
        net.set_flat(net.get_flat() + 0.1 * rng.standard_normal(net.num_parameters()))
        return net

    def targets(tree, n):
        fine = rng.integers(0, tree.num_classes, size=n)
        return tree.targets(fine)

    def mlp(tree, dim, fine_loss="literal"):
        k = tree.num_branches
        base = []
        for _ in range(k):
            base += [affine(6), RELU]
        stack = (affine(5), RELU, affine(5), RELU)
        sizes = tuple(tree.level_sizes())
        pm = tuple(tree.parent_map(tree.depth).tolist()) if k > 1 else ()
        cfg = VTNetConfig((dim,), tuple(base), tuple(2 * b + 1 for b in range(k - 1)), (stack,) * k,
                          sizes, pm, fine_loss=fine_loss, seed=int(rng.integers(1 << 30)))
        return jitter(VTNet(cfg))

    def convnet(tree, fine_loss="literal"):
        k = tree.num_branches
        base = (conv(3), RELU, POOL, conv(4), RELU)
        taps = (2,) * (k - 1)
        stack = (conv(2), RELU, conv(2), RELU, FLATTEN, affine(5), RELU, affine(5), RELU)
        sizes = tuple(tree.level_sizes())
        pm = tuple(tree.parent_map(tree.depth).tolist()) if k > 1 else ()
        cfg = VTNetConfig((2, 4, 4), base, taps, (stack,) * k, sizes, pm, fine_loss=fine_loss,
                          seed=int(rng.integers(1 << 30)))
        return jitter(VTNet(cfg))

    yield "mlp-1branch", mlp(tree1, 5), rng.standard_normal((4, 5)), targets(tree1, 4), (1.0,)
    for mode in ("literal", "log_f"):
        yield f"mlp-2branch-{mode}", mlp(tree2, 5, mode), rng.standard_normal((5, 5)), targets(tree2, 5), (0.7, 1.3)
        yield f"mlp-3branch-{mode}", mlp(tree3, 5, mode), rng.standard_normal((5, 5)), targets(tree3, 5), (0.4, 0.6, 1.0)
    yield "mlp-2branch-fine-only", mlp(tree2, 5), rng.standard_normal((4, 5)), targets(tree2, 4), (0.0, 1.0)
    yield "mlp-2branch-coarse-only", mlp(tree2, 5), rng.standard_normal((4, 5)), targets(tree2, 4), (1.0, 0.0)
    yield "conv-1branch", convnet(tree1), rng.standard_normal((3, 2, 4, 4)), targets(tree1, 3), (1.0,)
    for mode in ("literal", "log_f"):
        yield f"conv-2branch-{mode}", convnet(tree2, mode), rng.standard_normal((3, 2, 4, 4)), targets(tree2, 3), (0.5, 1.0)


def run_suite(seed: int = 0) -> list[GradcheckReport]:
    return [gradcheck(net, x, t, w, name) for name, net, x, t, w in seeded_suite(seed)]
