"""Central finite differences for checking hand-written backward passes."""

from __future__ import annotations

from typing import Callable

import numpy as np


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-5,
                 indices=None) -> np.ndarray:
    """Central-difference gradient of scalar ``f()`` w.r.t. array ``x`` (perturbed in place).

    If ``indices`` is given only those flat positions are evaluated; the rest
    of the returned array is NaN.
    """
    grad = np.full(x.shape, np.nan) if indices is not None else np.zeros(x.shape)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in (range(flat.size) if indices is None else indices):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-3) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, atol)``.

    ``atol`` stops entries that are zero up to rounding (e.g. a conv bias
    feeding batch norm) from dominating; below it the comparison is absolute.
    """
    mask = ~np.isnan(numeric)
    a = np.asarray(analytic)[mask]
    n = numeric[mask]
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), atol)
    return float(np.max(np.abs(a - n) / denom))


def kink_margin(model) -> float:
    """Smallest distance to a non-differentiable point seen in the last forward.

    Covers ReLU inputs (distance to 0) and max-pool windows (gap between the
    two largest entries). A finite-difference step must stay well below it.
    """
    from .layers import MaxPool2x2, ReLU

    margins = [leaf.margin for _, leaf in model.named_leaves()
               if isinstance(leaf, (ReLU, MaxPool2x2)) and leaf.margin is not None]
    return min(margins) if margins else float("inf")


def track_kinks(model, on: bool = True) -> None:
    from .layers import MaxPool2x2, ReLU

    for _, leaf in model.named_leaves():
        if isinstance(leaf, (ReLU, MaxPool2x2)):
            leaf.track_margin = on


def model_loss_fn(model, x, targets, dropout_seed: int = 0):
    """Training-mode loss closure with the dropout stream pinned on every call."""
    from .functional import softmax_cross_entropy

    def loss() -> float:
        model.reseed(dropout_seed)
        return softmax_cross_entropy(model.forward(x, training=True), targets)[0]

    return loss


def check_model_gradients(model, x, targets, rng: np.random.Generator, per_param: int = 12,
                          h: float = 1e-5, dropout_seed: int = 0) -> dict[str, float]:
    """Compare backprop against central differences for the input and every parameter.

    Up to ``per_param`` randomly chosen entries of each tensor are probed.
    Returns relative errors keyed by tensor name (``"input"`` for ``x``).
    """
    from .functional import softmax_cross_entropy

    loss = model_loss_fn(model, x, targets, dropout_seed)
    model.zero_grad()
    model.reseed(dropout_seed)
    _, g = softmax_cross_entropy(model.forward(x, training=True), targets)
    gx = model.backward(g)
    errors = {}
    idx = rng.choice(x.size, min(x.size, per_param), replace=False)
    errors["input"] = relative_error(gx, numeric_grad(loss, x, h, idx))
    for name, p, grad in model.named_parameters():
        grad = grad.copy()
        idx = rng.choice(p.size, min(p.size, per_param), replace=False)
        errors[name] = relative_error(grad, numeric_grad(loss, p, h, idx))
    return errors
