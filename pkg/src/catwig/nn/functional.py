"""Forward/backward pairs for every layer type, on NCHW numpy arrays.

Each ``*_forward`` returns ``(out, cache)``; the matching ``*_backward`` takes
that cache plus the upstream gradient. Caches record the output shape so a
gradient from a different call is rejected instead of silently broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class GeometryError(ValueError):
    pass


class CacheError(RuntimeError):
    """Backward called with a cache that does not belong to this gradient."""


@dataclass
class Cache:
    op: str
    out_shape: tuple
    data: dict[str, Any]


def _check_cache(cache: Cache | None, op: str, grad_out: np.ndarray) -> None:
    if cache is None or cache.op != op:
        raise CacheError(f"{op} backward needs a cache from {op} forward")
    if tuple(grad_out.shape) != tuple(cache.out_shape):
        raise CacheError(f"{op} backward: grad shape {grad_out.shape} != forward output {cache.out_shape}")


def conv_output_size(size: int, kernel: int, stride: int = 1, padding: int = 0,
                     strict: bool = False) -> int:
    """Spatial output size ``(size - kernel + 2*padding)/stride + 1``, floored.

    With ``strict=True`` a remainder in the division is an error. The default
    floors, since a stride-2 3x3/pad-1 conv on an even side leaves remainder 1.
    """
    if stride < 1 or kernel < 1 or padding < 0:
        raise GeometryError(f"bad conv geometry: kernel={kernel} stride={stride} padding={padding}")
    span = size - kernel + 2 * padding
    if span < 0:
        raise GeometryError(f"kernel {kernel} larger than padded input {size + 2 * padding}")
    if strict and span % stride:
        raise GeometryError(
            f"input {size}, kernel {kernel}, padding {padding} not divisible by stride {stride}")
    return span // stride + 1


# -- convolution --------------------------------------------------------------

def conv2d_forward(x, w, b=None, stride: int = 1, padding: int = 0):
    if x.ndim != 4 or w.ndim != 4:
        raise GeometryError(f"conv2d expects 4-D input and weights, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    oc, ic, kh, kw = w.shape
    if ic != c:
        raise GeometryError(f"input has {c} channels but weights expect {ic}")
    if kh != kw:
        raise GeometryError(f"non-square kernel {kh}x{kw}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(wd, kw, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    out = cols @ w.reshape(oc, -1).T
    if b is not None:
        out += b
    out = out.reshape(n, ho, wo, oc).transpose(0, 3, 1, 2)
    cache = Cache("conv2d", out.shape, dict(cols=cols, x_shape=x.shape, w=w, has_bias=b is not None,
                                            stride=stride, padding=padding))
    return np.ascontiguousarray(out), cache


def conv2d_backward(cache: Cache, grad_out):
    _check_cache(cache, "conv2d", grad_out)
    d = cache.data
    w = d["w"]
    n, c, h, wd = d["x_shape"]
    oc, _, k, _ = w.shape
    s, p = d["stride"], d["padding"]
    _, _, ho, wo = grad_out.shape
    g = grad_out.transpose(0, 2, 3, 1).reshape(-1, oc)
    grad_w = (g.T @ d["cols"]).reshape(w.shape)
    grad_b = g.sum(axis=0) if d["has_bias"] else None
    gcols = (g @ w.reshape(oc, -1)).reshape(n, ho, wo, c, k, k)
    gx = np.zeros((n, c, h + 2 * p, wd + 2 * p), dtype=grad_out.dtype)
    for i in range(k):
        for j in range(k):
            gx[:, :, i:i + s * ho:s, j:j + s * wo:s] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if p:
        gx = gx[:, :, p:-p, p:-p]
    return np.ascontiguousarray(gx), grad_w, grad_b


# -- pooling ------------------------------------------------------------------

def maxpool2x2_forward(x):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise GeometryError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    # argmax returns the first maximal index: ties route to the top-left-most element
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, Cache("maxpool2x2", out.shape, dict(idx=idx, x_shape=x.shape))


def maxpool2x2_backward(cache: Cache, grad_out):
    _check_cache(cache, "maxpool2x2", grad_out)
    n, c, h, w = cache.data["x_shape"]
    win = np.zeros(grad_out.shape + (4,), dtype=grad_out.dtype)
    np.put_along_axis(win, cache.data["idx"][..., None], grad_out[..., None], axis=-1)
    gx = win.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
    return gx


def global_avg_pool_forward(x):
    out = x.mean(axis=(2, 3), keepdims=True)
    return out, Cache("global_avg_pool", out.shape, dict(x_shape=x.shape))


def global_avg_pool_backward(cache: Cache, grad_out):
    _check_cache(cache, "global_avg_pool", grad_out)
    n, c, h, w = cache.data["x_shape"]
    return np.broadcast_to(grad_out / (h * w), (n, c, h, w)).copy()


# -- activations --------------------------------------------------------------

def relu_forward(x):
    out = np.maximum(x, 0)
    return out, Cache("relu", out.shape, dict(mask=x > 0))


def relu_backward(cache: Cache, grad_out):
    # subgradient at exactly 0 is taken as 0
    _check_cache(cache, "relu", grad_out)
    return grad_out * cache.data["mask"]


def dropout_forward(x, p: float, training: bool, rng: np.random.Generator | None = None):
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0:
        return x, Cache("dropout", x.shape, dict(mask=None))
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1 - p)
    return x * mask, Cache("dropout", x.shape, dict(mask=mask))


def dropout_backward(cache: Cache, grad_out):
    _check_cache(cache, "dropout", grad_out)
    mask = cache.data["mask"]
    return grad_out if mask is None else grad_out * mask


# -- batch norm ---------------------------------------------------------------

def batchnorm2d_forward(x, gamma, beta, running_mean, running_var, training: bool,
                        momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
    """Per-channel batch norm. Running buffers are updated in place in training mode."""
    n, c, h, w = x.shape
    shape = (1, c, 1, 1)
    if training:
        count = n * h * w
        if count < 2:
            raise ValueError("batch norm in training mode needs more than one value per channel")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (count / (count - 1))
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    out = gamma.reshape(shape) * xhat + beta.reshape(shape)
    return out, Cache("batchnorm2d", out.shape, dict(xhat=xhat, inv_std=inv_std, gamma=gamma,
                                                     training=training))


def batchnorm2d_backward(cache: Cache, grad_out):
    _check_cache(cache, "batchnorm2d", grad_out)
    d = cache.data
    xhat, inv_std, gamma = d["xhat"], d["inv_std"], d["gamma"]
    c = gamma.shape[0]
    shape = (1, c, 1, 1)
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    gxhat = grad_out * gamma.reshape(shape)
    if not d["training"]:
        return gxhat * inv_std.reshape(shape), grad_gamma, grad_beta
    m = grad_out.shape[0] * grad_out.shape[2] * grad_out.shape[3]
    gx = (inv_std.reshape(shape) / m) * (
        m * gxhat
        - gxhat.sum(axis=(0, 2, 3)).reshape(shape)
        - xhat * (gxhat * xhat).sum(axis=(0, 2, 3)).reshape(shape)
    )
    return gx, grad_gamma, grad_beta


# -- dense --------------------------------------------------------------------

def linear_forward(x, w, b=None):
    if x.ndim != 2 or x.shape[1] != w.shape[1]:
        raise GeometryError(f"linear: input {x.shape} incompatible with weights {w.shape}")
    out = x @ w.T
    if b is not None:
        out = out + b
    return out, Cache("linear", out.shape, dict(x=x, w=w, has_bias=b is not None))


def linear_backward(cache: Cache, grad_out):
    _check_cache(cache, "linear", grad_out)
    d = cache.data
    gx = grad_out @ d["w"]
    gw = grad_out.T @ d["x"]
    gb = grad_out.sum(axis=0) if d["has_bias"] else None
    return gx, gw, gb


# -- loss ---------------------------------------------------------------------

def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, targets, num_classes: int | None = None):
    """Mean cross-entropy of softmax(logits) against integer targets.

    Returns ``(loss, grad_logits)`` with ``grad = (softmax - onehot) / batch``.
    """
    logits = np.asarray(logits)
    targets = np.asarray(targets, dtype=np.int64)
    b, k = logits.shape
    num_classes = num_classes or k
    if targets.shape != (b,):
        raise ValueError(f"expected {b} targets, got shape {targets.shape}")
    if np.any(targets < 0) or np.any(targets >= num_classes):
        raise ValueError(f"target indices must lie in [0, {num_classes})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    log_q = z[np.arange(b), targets] - log_norm
    loss = float(-log_q.mean())
    grad = softmax(logits)
    grad[np.arange(b), targets] -= 1
    return loss, grad / b
