"""LeNet and ResNet assemblies plus a layer-by-layer parameter audit."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .nn import (
    BasicBlock,
    BatchNorm2d,
    Conv2d,
    Dropout,
    Flatten,
    GeometryError,
    GlobalAvgPool,
    Linear,
    MaxPool2x2,
    ModelGraph,
    ReLU,
    Sequential,
)

CLASS_COUNT = 4
IN_CHANNELS = 4
LENET_CHANNELS = (32, 64, 128, 256)
LENET_HIDDEN = (512, 128)
RESNET_CHANNELS = (64, 128, 256, 512)

# Reference ResNet rows at 128x128 input: (layer label, (H, W, C), params as printed).
REFERENCE_ROWS = (
    [("Conv2d(64,3,1)", (128, 128, 64), 2368), ("BatchNorm2d", (128, 128, 64), 64)]
    + [("Conv2d(64,3,1)", (128, 128, 64), 36864), ("BatchNorm2d", (128, 128, 64), 64)] * 4
    + [("Conv2d(64,3,2)", (64, 64, 128), 73728), ("BatchNorm2d", (64, 64, 128), 128)]
    + [("Conv2d(128,3,1)", (64, 64, 128), 147456), ("BatchNorm2d", (64, 64, 128), 128)] * 3
    + [("Conv2d(128,3,2)", (32, 32, 256), 294912), ("BatchNorm2d", (32, 32, 256), 256)]
    + [("Conv2d(256,3,1)", (32, 32, 256), 589824), ("BatchNorm2d", (32, 32, 256), 256)] * 3
    + [("Conv2d(256,3,2)", (16, 16, 512), 1179648), ("BatchNorm2d", (16, 16, 512), 512)]
    + [("Conv2d(512,3,1)", (16, 16, 512), 2359296), ("BatchNorm2d", (16, 16, 512), 512)] * 3
    + [("AdaptiveAvgPool2d", (1, 1, 512), 67108864), ("Linear", (1, 1, 4), 2048)]
)


@dataclass(frozen=True)
class WidthConfig:
    side: int = 128
    width_mult: float = 1.0

    def __post_init__(self):
        if not 0 < self.width_mult <= 1:
            raise ValueError(f"width_mult must lie in (0, 1], got {self.width_mult}")
        if self.side < 1:
            raise ValueError("side must be positive")

    def channels(self, base: int) -> int:
        if self.width_mult == 1:
            return base
        return max(4, int(round(base * self.width_mult / 4)) * 4)


def build_lenet(cfg: WidthConfig = WidthConfig(), seed: int = 0, dtype=np.float64,
                materialize: bool = True) -> ModelGraph:
    """Four 3x3 convs (pool after each pair), two hidden FC layers, 4-way output.

    ``materialize=False`` skips weight initialisation (all zeros, lazily
    allocated); enough for shape and parameter audits.
    """
    if cfg.side % 4:
        raise GeometryError(f"LeNet needs side divisible by 4, got {cfg.side}")
    rng = np.random.default_rng(seed) if materialize else None
    kw = dict(rng=rng, materialize=materialize)
    c1, c2, c3, c4 = (cfg.channels(c) for c in LENET_CHANNELS)
    h1, h2 = LENET_HIDDEN
    flat = c4 * (cfg.side // 4) ** 2
    layers = [
        ("conv1", Conv2d(IN_CHANNELS, c1, 3, 1, 1, **kw)), ("relu1", ReLU()),
        ("conv2", Conv2d(c1, c2, 3, 1, 1, **kw)), ("relu2", ReLU()),
        ("pool1", MaxPool2x2()),
        ("conv3", Conv2d(c2, c3, 3, 1, 1, **kw)), ("relu3", ReLU()),
        ("conv4", Conv2d(c3, c4, 3, 1, 1, **kw)), ("relu4", ReLU()),
        ("pool2", MaxPool2x2()),
        ("flatten", Flatten()),
        ("fc1", Linear(flat, h1, **kw)), ("relu5", ReLU()), ("dropout", Dropout(0.5)),
        ("fc2", Linear(h1, h2, **kw)), ("relu6", ReLU()),
        ("out", Linear(h2, CLASS_COUNT, **kw)),
    ]
    return _finish(ModelGraph("lenet", layers, (IN_CHANNELS, cfg.side, cfg.side), CLASS_COUNT),
                   seed, dtype, materialize)


def _finish(model: ModelGraph, seed: int, dtype, materialize: bool) -> ModelGraph:
    model.output_shape()
    if materialize and np.dtype(dtype) != np.float64:
        model.astype(dtype)
    model.reseed(seed)
    return model


def build_resnet(cfg: WidthConfig = WidthConfig(), seed: int = 0, dtype=np.float64,
                 materialize: bool = True) -> ModelGraph:
    """Stem conv, four groups of two basic blocks, global average pool, linear head."""
    if cfg.side % 8:
        raise GeometryError(f"ResNet needs side divisible by 8, got {cfg.side}")
    rng = np.random.default_rng(seed) if materialize else None
    kw = dict(rng=rng, materialize=materialize)
    widths = [cfg.channels(c) for c in RESNET_CHANNELS]
    layers = [
        ("stem", Sequential([
            ("conv", Conv2d(IN_CHANNELS, widths[0], 3, 1, 1, bias=True, **kw)),
            ("bn", BatchNorm2d(widths[0])),
            ("relu", ReLU()),
        ])),
    ]
    prev = widths[0]
    for g, width in enumerate(widths, start=1):
        stride = 1 if g == 1 else 2
        layers.append((f"g{g}", Sequential([
            ("b0", BasicBlock(prev, width, stride, **kw)),
            ("b1", BasicBlock(width, width, 1, **kw)),
        ])))
        prev = width
    layers.append(("pool", GlobalAvgPool()))
    layers.append(("fc", Linear(prev, CLASS_COUNT, bias=False, **kw)))
    return _finish(ModelGraph("resnet", layers, (IN_CHANNELS, cfg.side, cfg.side), CLASS_COUNT),
                   seed, dtype, materialize)


MODEL_NAMES = ("lenet", "resnet")


def build_model(name: str, cfg: WidthConfig, seed: int = 0, dtype=np.float64,
                materialize: bool = True) -> ModelGraph:
    builders = {"lenet": build_lenet, "resnet": build_resnet}
    if name not in builders:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(builders)}")
    return builders[name](cfg, seed, dtype, materialize)


# -- audit --------------------------------------------------------------------

@dataclass
class AuditRow:
    name: str
    layer: str
    shape: tuple  # (H, W, C)
    params: int
    table_convention: int  # BN counted as one value per channel
    table_params: int | None = None
    table_match: str = "n/a"

    @property
    def shape_text(self) -> str:
        return ",".join(str(s) for s in self.shape)


_AUDITED = (Conv2d, BatchNorm2d, GlobalAvgPool, MaxPool2x2, Flatten, Linear)


def _hwc(shape: tuple) -> tuple:
    if len(shape) == 3:
        c, h, w = shape
        return (h, w, c)
    return (1, 1, shape[0])


def audit_params(graph: ModelGraph) -> list[AuditRow]:
    """Walk the layer descriptors (no data) and count trainable parameters."""
    rows = []
    for name, leaf, out_shape in graph.trace(graph.input_spec):
        if not isinstance(leaf, _AUDITED):
            continue
        count = leaf.param_count()
        conv = leaf.channels if isinstance(leaf, BatchNorm2d) else count
        rows.append(AuditRow(name, leaf.describe(), _hwc(out_shape), count, conv))
    if graph.name == "resnet" and graph.input_spec == (IN_CHANNELS, 128, 128):
        _match_reference(rows)
    return rows


def _match_reference(rows: list[AuditRow]) -> None:
    main = [r for r in rows if ".shortcut." not in r.name]
    for r in rows:
        if ".shortcut." in r.name:
            r.table_match = "not-in-table"
    if len(main) != len(REFERENCE_ROWS):
        for r in main:
            r.table_match = "no-row"
        return
    for r, (label, shape, printed) in zip(main, REFERENCE_ROWS):
        r.table_params = printed
        if r.layer.startswith("Conv2d") or r.layer.startswith("Linear"):
            ok = r.shape == shape and r.params == printed
            r.table_match = "yes" if ok else "NO"
        elif r.layer == "BatchNorm2d":
            if r.shape != shape:
                r.table_match = "NO"
            elif r.params == printed:
                r.table_match = "yes"
            elif r.table_convention == printed:
                r.table_match = "table-convention"
            else:
                r.table_match = "NO"
        elif r.layer == "AdaptiveAvgPool2d":
            if r.shape != shape:
                r.table_match = "NO"
            else:
                r.table_match = "yes" if r.params == printed else "erratum"


def total_params(rows: list[AuditRow]) -> int:
    return sum(r.params for r in rows)


def format_audit(rows: list[AuditRow]) -> str:
    head = ("layer", "type", "output", "params", "table-conv", "printed", "match")
    body = [(r.name, r.layer, r.shape_text, str(r.params), str(r.table_convention),
             "" if r.table_params is None else str(r.table_params), r.table_match) for r in rows]
    body.append(("total", "", "", str(total_params(rows)), "", "", ""))
    widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in [head] + body]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def audit_csv(rows: list[AuditRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["layer", "shape", "params", "table_match"])
    for r in rows:
        w.writerow([r.name, "x".join(str(s) for s in r.shape), r.params, r.table_match])
    return buf.getvalue()
