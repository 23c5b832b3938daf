"""Branch losses and the probabilistic averaging layer.

Each function has a matching ``*_grad`` that returns gradients with respect
to its array inputs; the network composes them during backpropagation.
"""
from __future__ import annotations

import numpy as np

from cvtnet.errors import DegenerateAverageError, EmptyInputError, ShapeError
from cvtnet.ingest import softmax

AVERAGE_EPS = 1e-30


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _as_batch(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return z[None, :] if z.ndim == 1 else z


def _picked(logp: np.ndarray, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (logp.shape[0],):
        raise ShapeError("one target per sample is required")
    if y.size and (y.min() < 0 or y.max() >= logp.shape[1]):
        raise ShapeError(f"target outside [0, {logp.shape[1]})")
    return logp[np.arange(len(y)), y]


def cross_entropy(logits, y) -> float:
    """Mean softmax cross-entropy of logits against integer targets."""
    logits = _as_batch(logits)
    if logits.shape[0] == 0:
        raise EmptyInputError("empty batch")
    return float(-_picked(log_softmax(logits), y).mean())


def cross_entropy_grad(logits, y) -> np.ndarray:
    logits = _as_batch(logits)
    g = softmax(logits)
    g[np.arange(len(y)), np.asarray(y)] -= 1.0
    return g / logits.shape[0]


def coarse_loss(logits, targets, weights) -> float:
    """Weighted sum of per-branch cross-entropies over the coarse branches.

    ``logits`` holds one (n, size_k) array per coarse branch, ``targets``
    one target vector per coarse branch, ``weights`` one weight per branch.
    """
    if len(logits) != len(targets) or len(logits) != len(weights):
        raise ShapeError("logits, targets and weights must cover the same branches")
    if not logits:
        return 0.0
    if _as_batch(logits[0]).shape[0] == 0:
        raise EmptyInputError("empty batch")
    total = 0.0
    for z, y, w in zip(logits, targets, weights):
        total += float(w) * cross_entropy(z, y)
    return total


def coarse_loss_grad(logits, targets, weights) -> list[np.ndarray]:
    return [float(w) * cross_entropy_grad(z, y) for z, y, w in zip(logits, targets, weights)]


def _average_terms(c, f, t):
    # scale invariance in c lets a uniform c cancel exactly (c / max(c) == 1)
    top = c.max(axis=-1, keepdims=True)
    if np.any(top <= 0):
        raise DegenerateAverageError("coarse prediction has no positive mass")
    c_hat = c / top
    u = c_hat[..., t] * f
    s = u.sum(axis=-1, keepdims=True)
    if np.any(s * top < AVERAGE_EPS):
        raise DegenerateAverageError("coarse and fine predictions put no mass on consistent pairs")
    return top, c_hat, u, s, f.sum(axis=-1, keepdims=True)


def prob_average(c_coarse, f_fine, t_map) -> np.ndarray:
    """Reweight fine probabilities by their parent's coarse probability and
    renormalize: ``f_i = c[t(i)] f_i / sum_j c[t(j)] f_j``.

    The result is rescaled to the fine vector's own mass (1 for a
    probability vector), so a constant coarse factor cancels bit for bit.
    """
    c = np.asarray(c_coarse, dtype=np.float64)
    f = np.asarray(f_fine, dtype=np.float64)
    t = np.asarray(t_map, dtype=np.int64)
    if f.shape[-1] != len(t):
        raise ShapeError("t_map needs one parent per fine category")
    if t.size and (t.min() < 0 or t.max() >= c.shape[-1]):
        raise ShapeError("t_map points outside the coarse vector")
    _, _, u, s, mass = _average_terms(c, f, t)
    return u * (mass / s)


def prob_average_grad(d_f, c_coarse, f_fine, t_map):
    """Gradients of a scalar through :func:`prob_average`.

    Returns ``(d_c_coarse, d_f_fine)`` given ``d_f`` = dL/df.
    """
    c = _as_batch(c_coarse)
    f = _as_batch(f_fine)
    d_f = _as_batch(d_f)
    t = np.asarray(t_map, dtype=np.int64)
    top, c_hat, u, s, mass = _average_terms(c, f, t)
    out = u * (mass / s)
    d_dot_out = (d_f * out).sum(axis=1, keepdims=True)
    d_u = (mass * d_f - d_dot_out) / s
    # the mass factor depends on every fine entry
    d_fine = d_u * c_hat[:, t] + (d_f * u).sum(axis=1, keepdims=True) / s
    d_c = np.zeros_like(c)
    np.add.at(d_c.T, t, (d_u * f).T)
    return d_c / top, d_fine


def fine_loss(f, y, weight, mode: str = "literal") -> float:
    """Fine-branch loss on averaged predictions ``f``.

    ``literal`` applies a softmax over ``f`` before the log, ``log_f`` uses
    ``-log f_y`` directly.
    """
    f = _as_batch(f)
    if f.shape[0] == 0:
        raise EmptyInputError("empty batch")
    if mode == "literal":
        return float(weight) * cross_entropy(f, y)
    if mode == "log_f":
        with np.errstate(divide="ignore"):
            return float(weight) * float(-np.log(_picked(f, y)).mean())
    raise ValueError(f"unknown fine loss mode {mode!r}")


def fine_loss_grad(f, y, weight, mode: str = "literal") -> np.ndarray:
    f = _as_batch(f)
    if mode == "literal":
        return float(weight) * cross_entropy_grad(f, y)
    y = np.asarray(y, dtype=np.int64)
    g = np.zeros_like(f)
    rows = np.arange(len(y))
    g[rows, y] = -float(weight) / (f[rows, y] * f.shape[0])
    return g


def softmax_grad(p: np.ndarray, d_p: np.ndarray) -> np.ndarray:
    """Backpropagate ``d_p`` = dL/dp through ``p = softmax(z)``."""
    return p * (d_p - (d_p * p).sum(axis=-1, keepdims=True))
