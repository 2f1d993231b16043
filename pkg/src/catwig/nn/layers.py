"""Layer objects holding parameters, gradients, buffers and forward caches."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import functional as F
from .functional import CacheError, GeometryError


def kaiming_uniform(rng: np.random.Generator | None, shape: tuple, fan_in: int) -> np.ndarray:
    if rng is None:
        # shape-only placeholder; calloc'd pages stay untouched
        return np.zeros(shape)
    # ReLU gain sqrt(2): bound = gain * sqrt(3 / fan_in)
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    """Base class. Leaf layers keep ``params``/``grads``/``buffers`` dicts."""

    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def children(self) -> list[tuple[str, "Layer"]]:
        return []

    def forward(self, x, training: bool = False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def output_shape(self, shape: tuple) -> tuple:
        return shape

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def describe(self) -> str:
        return self.kind

    def zero_grad(self) -> None:
        for k, p in self.params.items():
            self.grads[k] = np.zeros_like(p)

    def _take_cache(self):
        cache, self._cache = self._cache, None
        if cache is None:
            raise CacheError(f"{self.describe()}: backward without a matching forward")
        return cache

    def named_leaves(self, prefix: str = "") -> Iterator[tuple[str, "Layer"]]:
        kids = self.children()
        if not kids:
            yield prefix, self
        for name, child in kids:
            yield from child.named_leaves(f"{prefix}.{name}" if prefix else name)

    def trace(self, shape: tuple, prefix: str = "") -> Iterator[tuple[str, "Layer", tuple]]:
        """Yield ``(name, leaf, output_shape)`` in execution order without running data."""
        yield prefix, self, self.output_shape(shape)


class Conv2d(Layer):
    kind = "Conv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3, stride: int = 1,
                 padding: int = 1, bias: bool = True, rng: np.random.Generator | None = None,
                 materialize: bool = True):
        super().__init__()
        if rng is None and materialize:
            rng = np.random.default_rng(0)
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.stride, self.padding = kernel_size, stride, padding
        fan_in = in_channels * kernel_size * kernel_size
        self.params["weight"] = kaiming_uniform(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in)
        if bias:
            self.params["bias"] = np.zeros(out_channels)
        self.zero_grad()

    def forward(self, x, training=False):
        out, self._cache = F.conv2d_forward(x, self.params["weight"], self.params.get("bias"),
                                            self.stride, self.padding)
        return out

    def backward(self, grad):
        gx, gw, gb = F.conv2d_backward(self._take_cache(), grad)
        self.grads["weight"] += gw
        if gb is not None:
            self.grads["bias"] += gb
        return gx

    def output_shape(self, shape):
        c, h, w = shape
        if c != self.in_channels:
            raise GeometryError(f"{self.describe()} expects {self.in_channels} channels, got {c}")
        return (self.out_channels,
                F.conv_output_size(h, self.kernel_size, self.stride, self.padding),
                F.conv_output_size(w, self.kernel_size, self.stride, self.padding))

    def describe(self):
        return f"Conv2d({self.in_channels},{self.kernel_size},{self.stride})"


class BatchNorm2d(Layer):
    kind = "BatchNorm2d"

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)
        self.zero_grad()

    def forward(self, x, training=False):
        out, self._cache = F.batchnorm2d_forward(
            x, self.params["gamma"], self.params["beta"],
            self.buffers["running_mean"], self.buffers["running_var"], training)
        return out

    def backward(self, grad):
        gx, gg, gb = F.batchnorm2d_backward(self._take_cache(), grad)
        self.grads["gamma"] += gg
        self.grads["beta"] += gb
        return gx

    def output_shape(self, shape):
        if shape[0] != self.channels:
            raise GeometryError(f"BatchNorm2d({self.channels}) got {shape[0]} channels")
        return shape


class ReLU(Layer):
    kind = "ReLU"
    track_margin = False

    def __init__(self):
        super().__init__()
        self.margin = None

    def forward(self, x, training=False):
        if self.track_margin:
            self.margin = float(np.min(np.abs(x)))
        out, self._cache = F.relu_forward(x)
        return out

    def backward(self, grad):
        return F.relu_backward(self._take_cache(), grad)


class MaxPool2x2(Layer):
    kind = "MaxPool2d"
    track_margin = False

    def __init__(self):
        super().__init__()
        self.margin = None

    def forward(self, x, training=False):
        out, self._cache = F.maxpool2x2_forward(x)
        if self.track_margin:
            n, c, h, w = x.shape
            win = np.sort(x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
                          .reshape(-1, 4), axis=1)
            # windows tied at exactly 0 come from ReLU clamping; the ReLU margin covers them
            live = win[:, 3] != 0
            self.margin = float(np.min(win[live, 3] - win[live, 2])) if live.any() else None
        return out

    def backward(self, grad):
        return F.maxpool2x2_backward(self._take_cache(), grad)

    def output_shape(self, shape):
        c, h, w = shape
        if h % 2 or w % 2:
            raise GeometryError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
        return (c, h // 2, w // 2)


class GlobalAvgPool(Layer):
    kind = "AdaptiveAvgPool2d"

    def forward(self, x, training=False):
        out, self._cache = F.global_avg_pool_forward(x)
        return out

    def backward(self, grad):
        return F.global_avg_pool_backward(self._take_cache(), grad)

    def output_shape(self, shape):
        return (shape[0], 1, 1)


class Flatten(Layer):
    kind = "Flatten"

    def forward(self, x, training=False):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._take_cache())

    def output_shape(self, shape):
        return (int(np.prod(shape)),)


class Dropout(Layer):
    kind = "Dropout"

    def __init__(self, p: float = 0.5):
        super().__init__()
        self.p = p
        self.rng = np.random.default_rng(0)

    def forward(self, x, training=False):
        out, self._cache = F.dropout_forward(x, self.p, training, self.rng)
        return out

    def backward(self, grad):
        return F.dropout_backward(self._take_cache(), grad)


class Linear(Layer):
    kind = "Linear"

    def __init__(self, in_features: int, out_features: int, bias: bool = True,
                 rng: np.random.Generator | None = None, materialize: bool = True):
        super().__init__()
        if rng is None and materialize:
            rng = np.random.default_rng(0)
        self.in_features, self.out_features = in_features, out_features
        self.params["weight"] = kaiming_uniform(rng, (out_features, in_features), in_features)
        if bias:
            self.params["bias"] = np.zeros(out_features)
        self.zero_grad()

    def forward(self, x, training=False):
        in_shape = x.shape
        out, cache = F.linear_forward(x.reshape(x.shape[0], -1), self.params["weight"],
                                      self.params.get("bias"))
        self._cache = (cache, in_shape)
        return out

    def backward(self, grad):
        cache, in_shape = self._take_cache()
        gx, gw, gb = F.linear_backward(cache, grad)
        self.grads["weight"] += gw
        if gb is not None:
            self.grads["bias"] += gb
        return gx.reshape(in_shape)

    def output_shape(self, shape):
        if int(np.prod(shape)) != self.in_features:
            raise GeometryError(f"Linear expects {self.in_features} features, got shape {shape}")
        return (self.out_features,)

    def describe(self):
        return f"Linear({self.in_features},{self.out_features})"


class Sequential(Layer):
    kind = "Sequential"

    def __init__(self, layers: list[tuple[str, Layer]]):
        super().__init__()
        self.layers = list(layers)

    def children(self):
        return self.layers

    def forward(self, x, training=False):
        for name, layer in self.layers:
            x = layer.forward(x, training)
            if not np.all(np.isfinite(x)):
                raise FloatingPointError(f"non-finite activations after {name} ({layer.describe()})")
        return x

    def backward(self, grad):
        for _, layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def output_shape(self, shape):
        for _, layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def trace(self, shape, prefix=""):
        for name, layer in self.layers:
            qual = f"{prefix}.{name}" if prefix else name
            for row in layer.trace(shape, qual):
                yield row
            shape = layer.output_shape(shape)


class BasicBlock(Layer):
    """Two 3x3 conv+BN stages plus a shortcut, summed before the final ReLU."""

    kind = "BasicBlock"

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1,
                 rng: np.random.Generator | None = None, materialize: bool = True):
        super().__init__()
        if rng is None and materialize:
            rng = np.random.default_rng(0)
        self.branch = Sequential([
            ("conv1", Conv2d(in_channels, out_channels, 3, stride, 1, bias=False, rng=rng,
                             materialize=materialize)),
            ("bn1", BatchNorm2d(out_channels)),
            ("relu1", ReLU()),
            ("conv2", Conv2d(out_channels, out_channels, 3, 1, 1, bias=False, rng=rng,
                             materialize=materialize)),
            ("bn2", BatchNorm2d(out_channels)),
        ])
        if stride != 1 or in_channels != out_channels:
            self.shortcut = Sequential([
                ("conv", Conv2d(in_channels, out_channels, 1, stride, 0, bias=False, rng=rng,
                                materialize=materialize)),
                ("bn", BatchNorm2d(out_channels)),
            ])
        else:
            self.shortcut = None
        self.out_relu = ReLU()

    def children(self):
        kids = [("branch", self.branch)]
        if self.shortcut is not None:
            kids.append(("shortcut", self.shortcut))
        kids.append(("relu", self.out_relu))
        return kids

    def residual(self, x, training=False):
        return self.branch.forward(x, training)

    def skip(self, x, training=False):
        return x if self.shortcut is None else self.shortcut.forward(x, training)

    def pre_activation(self, x, training=False):
        return self.residual(x, training) + self.skip(x, training)

    def forward(self, x, training=False):
        return self.out_relu.forward(self.pre_activation(x, training), training)

    def backward(self, grad):
        g = self.out_relu.backward(grad)
        gx = self.branch.backward(g)
        gx = gx + (g if self.shortcut is None else self.shortcut.backward(g))
        return gx

    def output_shape(self, shape):
        out = self.branch.output_shape(shape)
        if self.shortcut is not None and self.shortcut.output_shape(shape) != out:
            raise GeometryError("shortcut and residual branch shapes differ")
        if self.shortcut is None and out != tuple(shape):
            raise GeometryError("identity shortcut needs matching shapes")
        return out

    def trace(self, shape, prefix=""):
        yield from self.branch.trace(shape, f"{prefix}.branch")
        if self.shortcut is not None:
            yield from self.shortcut.trace(shape, f"{prefix}.shortcut")
        yield f"{prefix}.relu", self.out_relu, self.output_shape(shape)
