from __future__ import annotations

from typing import Iterator

import numpy as np

from .layers import Dropout, Layer, Sequential


class ModelGraph(Sequential):
    """A named, ordered layer stack with parameter iteration and state access."""

    kind = "ModelGraph"

    def __init__(self, name: str, layers, input_spec: tuple, class_count: int = 4):
        super().__init__(layers)
        self.name = name
        self.input_spec = tuple(input_spec)
        self.class_count = class_count
        self.dtype = np.float64

    def named_parameters(self) -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
        """Yield ``(name, param, grad)``; arrays are live references."""
        for prefix, leaf in self.named_leaves():
            for key, p in leaf.params.items():
                yield f"{prefix}.{key}", p, leaf.grads[key]

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for prefix, leaf in self.named_leaves():
            for key, b in leaf.buffers.items():
                yield f"{prefix}.{key}", b

    def param_count(self) -> int:
        return sum(p.size for _, p, _ in self.named_parameters())

    def zero_grad(self) -> None:
        for _, leaf in self.named_leaves():
            leaf.zero_grad()

    def astype(self, dtype) -> "ModelGraph":
        for _, leaf in self.named_leaves():
            for store in (leaf.params, leaf.buffers):
                for k in store:
                    store[k] = store[k].astype(dtype)
            leaf.zero_grad()
        self.dtype = np.dtype(dtype).type
        return self

    def reseed(self, seed: int) -> None:
        """Reset every dropout stream from ``seed``."""
        drops = [leaf for _, leaf in self.named_leaves() if isinstance(leaf, Dropout)]
        for i, leaf in enumerate(drops):
            leaf.rng = np.random.Generator(np.random.PCG64([seed, i]))

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: p for name, p, _ in self.named_parameters()}
        out.update(dict(self.named_buffers()))
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if strict and (missing or unexpected):
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, arr in own.items():
            if name not in state:
                continue
            src = np.asarray(state[name])
            if src.shape != arr.shape:
                raise ValueError(f"{name}: checkpoint shape {src.shape} != model shape {arr.shape}")
            arr[...] = src

    def predict_logits(self, x, batch_size: int = 16) -> np.ndarray:
        outs = [self.forward(x[i:i + batch_size].astype(self.dtype, copy=False), training=False)
                for i in range(0, len(x), batch_size)]
        return np.concatenate(outs)

    def output_shape(self, shape=None):
        return super().output_shape(self.input_spec if shape is None else shape)


def leaf_layers(model: Layer) -> list[Layer]:
    return [leaf for _, leaf in model.named_leaves()]
