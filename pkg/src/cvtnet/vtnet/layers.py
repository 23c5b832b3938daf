"""Layer vocabulary with hand-written forward and backward passes.

Activations are numpy arrays with the batch on axis 0: (n, d) for vectors
and (n, c, h, w) for feature maps.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cvtnet import kernels
from cvtnet.errors import ShapeError

KINDS = ("affine", "relu", "conv2d", "maxpool2d", "flatten")
KERNEL = 3
PAD = 1


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    size: int = 0
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("affine", "conv2d") and self.size < 1:
            raise ShapeError(f"{self.kind} needs a positive size")

    def to_dict(self):
        return {"kind": self.kind, "size": self.size, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], int(d.get("size", 0)), d.get("seed"))


def affine(n):
    return LayerSpec("affine", n)


def conv(n):
    return LayerSpec("conv2d", n)


RELU = LayerSpec("relu")
POOL = LayerSpec("maxpool2d")
FLATTEN = LayerSpec("flatten")


class Layer:
    """Base class; parametric layers fill ``params`` and ``grads``."""

    def __init__(self, name, in_shape):
        self.name = name
        self.in_shape = tuple(in_shape)
        self.params: dict[str, np.ndarray] = {}
        self.out_shape = self.in_shape

    def init(self, rng, mode):
        pass

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout, cache):
        """Return ``(dx, {param: grad})``."""
        raise NotImplementedError


def _he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Affine(Layer):
    def __init__(self, name, in_shape, out_dim):
        super().__init__(name, in_shape)
        if len(self.in_shape) != 1:
            raise ShapeError(f"{name}: affine expects a flat input, got shape {self.in_shape}")
        self.out_shape = (out_dim,)
        self.params = {"W": np.zeros((self.in_shape[0], out_dim)), "b": np.zeros(out_dim)}

    def init(self, rng, mode):
        if mode == "he":
            self.params["W"][...] = _he_uniform(rng, self.params["W"].shape, self.in_shape[0])
        self.params["b"][...] = 0.0

    def forward(self, x):
        return x @ self.params["W"] + self.params["b"], x

    def backward(self, dout, x):
        return dout @ self.params["W"].T, {"W": x.T @ dout, "b": dout.sum(axis=0)}


class ReLU(Layer):
    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, dout, mask):
        return dout * mask, {}


class Conv2d(Layer):
    """3x3 convolution, stride 1, zero padding 1."""

    def __init__(self, name, in_shape, out_channels):
        super().__init__(name, in_shape)
        if len(self.in_shape) != 3:
            raise ShapeError(f"{name}: conv2d expects (c, h, w) input, got shape {self.in_shape}")
        c, h, w = self.in_shape
        self.out_shape = (out_channels, h, w)
        self.params = {"W": np.zeros((out_channels, c, KERNEL, KERNEL)), "b": np.zeros(out_channels)}

    def init(self, rng, mode):
        if mode == "he":
            fan_in = self.in_shape[0] * KERNEL * KERNEL
            self.params["W"][...] = _he_uniform(rng, self.params["W"].shape, fan_in)
        self.params["b"][...] = 0.0

    def forward(self, x):
        n = x.shape[0]
        oc, h, w = self.out_shape
        cols = kernels.im2col(x, KERNEL, PAD)
        out = cols @ self.params["W"].reshape(oc, -1).T + self.params["b"]
        return out.reshape(n, h, w, oc).transpose(0, 3, 1, 2), (cols, x.shape)

    def backward(self, dout, cache):
        cols, shape = cache
        oc = self.out_shape[0]
        d2 = dout.transpose(0, 2, 3, 1).reshape(-1, oc)
        w2 = self.params["W"].reshape(oc, -1)
        dw = (d2.T @ cols).reshape(self.params["W"].shape)
        dx = kernels.col2im(d2 @ w2, shape, KERNEL, PAD)
        return dx, {"W": dw, "b": d2.sum(axis=0)}


class MaxPool2d(Layer):
    """2x2 max pooling with stride 2; gradient goes to the first maximum."""

    def __init__(self, name, in_shape):
        super().__init__(name, in_shape)
        if len(self.in_shape) != 3:
            raise ShapeError(f"{name}: maxpool2d expects (c, h, w) input, got shape {self.in_shape}")
        c, h, w = self.in_shape
        if h % 2 or w % 2:
            raise ShapeError(f"{name}: maxpool2d needs even spatial dims, got {h}x{w}")
        self.out_shape = (c, h // 2, w // 2)

    def forward(self, x):
        n, c, h, w = x.shape
        win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        arg = win.argmax(axis=-1)
        out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        return out, (arg, x.shape)

    def backward(self, dout, cache):
        arg, (n, c, h, w) = cache
        win = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(win, arg[..., None], dout[..., None], axis=-1)
        dx = win.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return dx, {}


class Flatten(Layer):
    def __init__(self, name, in_shape):
        super().__init__(name, in_shape)
        self.out_shape = (int(np.prod(self.in_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dout, shape):
        return dout.reshape(shape), {}


def build_layer(spec: LayerSpec, name: str, in_shape) -> Layer:
    if spec.kind == "affine":
        return Affine(name, in_shape, spec.size)
    if spec.kind == "conv2d":
        return Conv2d(name, in_shape, spec.size)
    if spec.kind == "maxpool2d":
        return MaxPool2d(name, in_shape)
    if spec.kind == "flatten":
        return Flatten(name, in_shape)
    return ReLU(name, in_shape)
