"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"CWNN"  u16 version
    repeat until EOF:
        u32 name_length, name (UTF-8)
        u32 ndim, ndim x u32 dims
        prod(dims) x float32 payload

Optimizer state, when included, is stored as ``adam.m/<param>``,
``adam.v/<param>`` and a one-element ``adam.t`` record.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .optim import AdamState

MAGIC = b"CWNN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dump_records(records: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<H", VERSION)]
    for name, arr in records.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def load_records(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a CWNN checkpoint (bad magic)")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 6
    out = {}
    try:
        while pos < len(blob):
            (nlen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            count = int(np.prod(dims)) if ndim else 1
            end = pos + 4 * count
            if end > len(blob):
                raise CheckpointError(f"record {name!r} truncated")
            out[name] = np.frombuffer(blob[pos:end], dtype="<f4").reshape(dims).copy()
            pos = end
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    return out


def save_checkpoint(path, model, optimizer_state: AdamState | None = None) -> None:
    records = dict(model.state_dict())
    if optimizer_state is not None:
        for name in records.copy():
            if name in optimizer_state.m:
                records[f"adam.m/{name}"] = optimizer_state.m[name]
                records[f"adam.v/{name}"] = optimizer_state.v[name]
        records["adam.t"] = np.array([optimizer_state.t], dtype=np.float32)
    Path(path).write_bytes(dump_records(records))


def load_checkpoint(path, model, optimizer_state: AdamState | None = None) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    records = load_records(path.read_bytes())
    model_part = {k: v for k, v in records.items() if not k.startswith("adam.")}
    model.load_state_dict(model_part)
    if optimizer_state is not None and "adam.t" in records:
        optimizer_state.t = int(records["adam.t"][0])
        for k, v in records.items():
            if k.startswith("adam.m/"):
                optimizer_state.m[k[7:]] = v.astype(model.dtype)
            elif k.startswith("adam.v/"):
                optimizer_state.v[k[7:]] = v.astype(model.dtype)
    return records
