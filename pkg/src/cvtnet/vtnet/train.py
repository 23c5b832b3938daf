"""Phased SGD training and evaluation of branch networks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from cvtnet.errors import DivergenceError, EmptyInputError, ShapeError
from cvtnet.vtnet.losses import cross_entropy, fine_loss
from cvtnet.vtnet.net import VTNet

MOMENTUM = 0.9
BATCH_SIZE = 32


@dataclass(frozen=True)
class TrainPhase:
    """One stage of the schedule.

    ``lr_steps`` holds ``(epoch, value)`` change points: from 0-based epoch
    ``epoch`` on, the learning rate is ``value``.
    """

    loss_weights: tuple[float, ...]
    epochs: int
    lr: float
    lr_steps: tuple[tuple[int, float], ...] = ()
    batch_size: int = BATCH_SIZE
    shuffle_seed: int = 0
    momentum: float = MOMENTUM

    def __post_init__(self):
        if any(w < 0 for w in self.loss_weights):
            raise ShapeError("loss weights must be non-negative")
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0:
            raise ShapeError("epochs, batch_size and lr must be non-negative (batch_size positive)")

    def lr_at(self, epoch: int) -> float:
        lr = self.lr
        for start, value in sorted(self.lr_steps):
            if epoch >= start:
                lr = value
        return lr


def coarse_phase_weights(k: int) -> tuple[float, ...]:
    """Equal weights summing to 1 on the coarse branches, 0 on the fine one."""
    if k == 1:
        return (0.0,)
    return tuple([1.0 / (k - 1)] * (k - 1) + [0.0])


def fine_phase_weights(k: int) -> tuple[float, ...]:
    return tuple([0.0] * (k - 1) + [1.0])


def default_phases(k: int, coarse_epochs: int = 20, fine_epochs: int = 20, lr: float = 0.05,
                   lr_steps: Sequence[tuple[int, float]] = (), batch_size: int = BATCH_SIZE,
                   shuffle_seed: int = 0) -> list[TrainPhase]:
    steps = tuple(tuple(s) for s in lr_steps)
    return [
        TrainPhase(coarse_phase_weights(k), coarse_epochs, lr, steps, batch_size, shuffle_seed),
        TrainPhase(fine_phase_weights(k), fine_epochs, lr, steps, batch_size, shuffle_seed + 1),
    ]


CIFAR10_LR = (0.003, ((40, 0.0005), (50, 0.0001)))
CIFAR100_LR = (0.001, ((55, 0.0002), (70, 0.00005)))


@dataclass
class EpochMetric:
    phase: int
    epoch: int
    branch: int
    loss: float
    top1: float

    def csv(self) -> str:
        return f"{self.phase},{self.epoch},{self.branch},{self.loss!r},{self.top1!r}"


@dataclass
class TrainResult:
    net: VTNet
    metrics: list[EpochMetric] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)


def branch_losses(net: VTNet, out, targets) -> list[float]:
    """Unweighted per-branch losses (fine branch on its final prediction)."""
    k = net.config.num_branches
    vals = [cross_entropy(out.logits[b], targets[:, b]) for b in range(k - 1)]
    if k == 1:
        vals.append(cross_entropy(out.logits[-1], targets[:, -1]))
    else:
        vals.append(fine_loss(out.averaged, targets[:, -1], 1.0, net.config.fine_loss))
    return vals


def branch_predictions(net: VTNet, out) -> list[np.ndarray]:
    """Argmax per branch; the fine branch uses the averaged prediction."""
    k = net.config.num_branches
    preds = [out.logits[b].argmax(axis=1) for b in range(k - 1)]
    preds.append(out.prediction.argmax(axis=1))
    return preds


def train(net: VTNet, x, targets, phases: Sequence[TrainPhase], seed: int = 0,
          on_step: Callable | None = None) -> TrainResult:
    """Run ``phases`` in order with momentum SGD, updating ``net`` in place.

    ``on_step(phase, epoch, step, grads)`` is called after each gradient
    evaluation, before the update.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(targets, dtype=np.int64)
    if t.ndim == 1:
        t = t[:, None]
    if len(x) != len(t):
        raise ShapeError("features and targets differ in length")
    k = net.config.num_branches
    result = TrainResult(net)
    params = net.parameters()
    n = len(x)
    step = 0
    for p_idx, phase in enumerate(phases, start=1):
        if len(phase.loss_weights) != k:
            raise ShapeError(f"phase {p_idx} needs {k} loss weights")
        if phase.epochs and n == 0:
            raise EmptyInputError("no training samples")
        rng = np.random.default_rng([seed, phase.shuffle_seed, p_idx])
        velocity = {name: np.zeros_like(p) for name, p in params.items()}
        for epoch in range(phase.epochs):
            lr = phase.lr_at(epoch)
            order = rng.permutation(n)
            loss_sums = np.zeros(k)
            correct = np.zeros(k)
            for start in range(0, n, phase.batch_size):
                idx = order[start:start + phase.batch_size]
                xb, tb = x[idx], t[idx]
                total, out, grads = net.loss_and_grads(xb, tb, phase.loss_weights)
                if not math.isfinite(total):
                    raise DivergenceError(f"loss became {total} in phase {p_idx}, epoch {epoch}", epoch)
                result.step_losses.append(total)
                loss_sums += np.array(branch_losses(net, out, tb)) * len(idx)
                for b, pred in enumerate(branch_predictions(net, out)):
                    correct[b] += int((pred == tb[:, b]).sum())
                if on_step is not None:
                    on_step(p_idx, epoch, step, grads)
                for name, g in grads.items():
                    v = velocity[name]
                    v *= phase.momentum
                    v += g
                    params[name] -= lr * v
                step += 1
            for b in range(k):
                result.metrics.append(EpochMetric(p_idx, epoch, b + 1, float(loss_sums[b] / n),
                                                  float(correct[b] / n)))
    return result


def evaluate(net: VTNet, x, targets) -> list[float]:
    """Top-1 accuracy per branch; the fine branch is scored on the averaged
    prediction."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0:
        raise EmptyInputError("empty evaluation set")
    t = net.check_targets(targets)
    out = net.forward(x)
    return [float((pred == t[:, b]).mean()) for b, pred in enumerate(branch_predictions(net, out))]
