from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params, grads, state: AdamState) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place.

    ``params`` and ``grads`` are dicts keyed by parameter name.
    """
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        if state.lr:
            p -= (state.lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
    return state


class Adam:
    """Adam bound to a model's live parameter arrays."""

    def __init__(self, model, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.model = model
        self.state = AdamState(lr, beta1, beta2, eps)

    def step(self) -> None:
        params, grads = {}, {}
        for name, p, g in self.model.named_parameters():
            params[name] = p
            grads[name] = g
        adam_step(params, grads, self.state)
