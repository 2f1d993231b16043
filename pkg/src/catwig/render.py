"""Image corpus: colour mapping, PNG I/O, manifest, resizing and batching."""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np
from PIL import Image

from . import qstate
from .qstate import StateClass, W_MAX

COLORMAP_VERSION = "wmap-v1"
MANIFEST_NAME = "manifest.csv"
META_NAME = "corpus_meta.txt"
MANIFEST_HEADER = ("path", "label", "n", "split")
SPLITS = ("train", "test")


class CorruptGridError(ValueError):
    pass


class EmptySplitError(ValueError):
    pass


@dataclass
class ImageRecord:
    pixels: np.ndarray  # (H, W, 4) uint8, RGBA
    label: StateClass
    n_photon: int
    extent: float
    source_resolution: int


@dataclass
class ManifestEntry:
    path: str
    label: int
    n_photon: int
    split: str


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry]
    seed: int
    split_fraction: float = 0.8
    root: Path | None = None

    def select(self, split: str) -> list[ManifestEntry]:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return [e for e in self.entries if e.split == split]

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() or self.root is None else self.root / p

    def write(self, path: Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(MANIFEST_HEADER)
            for e in self.entries:
                w.writerow([e.path, e.label, e.n_photon, e.split])

    @classmethod
    def read(cls, corpus_dir) -> "CorpusManifest":
        corpus_dir = Path(corpus_dir)
        path = corpus_dir / MANIFEST_NAME
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if tuple(header or ()) != MANIFEST_HEADER:
                raise ValueError(f"{path}: bad manifest header {header!r}")
            entries = [ManifestEntry(r[0], int(r[1]), int(r[2]), r[3]) for r in reader if r]
        meta = read_meta(corpus_dir)
        return cls(entries, int(meta.get("seed", 0)), float(meta.get("split_fraction", 0.8)), corpus_dir)


@dataclass
class Batch:
    inputs: np.ndarray  # (B, 4, side, side) in [0, 1]
    targets: np.ndarray  # (B,) int
    paths: list[str] = field(default_factory=list)


# -- colour map ---------------------------------------------------------------

def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def colorize_values(values: np.ndarray) -> np.ndarray:
    """Map Wigner values to RGBA bytes: blue (-2/pi) .. white (0) .. red (+2/pi)."""
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise CorruptGridError("grid contains NaN or Inf")
    t = np.clip(values / W_MAX, -1.0, 1.0)
    pos = np.maximum(t, 0.0)
    neg = np.minimum(t, 0.0)
    out = np.empty(values.shape + (4,), dtype=np.uint8)
    out[..., 0] = _round_half_up(255.0 * (1.0 + neg))
    out[..., 1] = _round_half_up(255.0 * (1.0 - np.abs(t)))
    out[..., 2] = _round_half_up(255.0 * (1.0 - pos))
    out[..., 3] = 255
    return out


def decode_values(pixels: np.ndarray) -> np.ndarray:
    """Invert the colour map up to 8-bit quantisation (returns Wigner units)."""
    px = np.asarray(pixels, dtype=float)
    return (px[..., 0] - px[..., 2]) / 255.0 * W_MAX


def colorize(grid: qstate.WignerGrid, label=StateClass.COHERENT, n_photon: int = 0) -> ImageRecord:
    return ImageRecord(colorize_values(grid.values), StateClass.parse(label), int(n_photon),
                       grid.extent, grid.resolution)


def render_state(label, n_photon: int, resolution: int = 512, extent: float | None = None) -> ImageRecord:
    state = qstate.make_state(label, n_photon)
    if extent is None:
        extent = qstate.default_extent(n_photon)
    grid = qstate.wigner_analytic(state, extent, resolution)
    return colorize(grid, state.class_id, n_photon)


# -- PNG I/O ------------------------------------------------------------------

def png_bytes(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels), mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()


def write_png(path, pixels: np.ndarray) -> None:
    try:
        Path(path).write_bytes(png_bytes(pixels))
    except OSError as exc:
        raise OSError(f"failed to write {path}: {exc}") from exc


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGBA"), dtype=np.uint8).copy()


# -- shuffling ----------------------------------------------------------------

def _bounded(bitgen: np.random.PCG64, bound: int) -> int:
    # rejection sampling on raw 64-bit outputs keeps the draw unbiased
    limit = (1 << 64) - ((1 << 64) % bound)
    while True:
        r = int(bitgen.random_raw())
        if r < limit:
            return r % bound


def seeded_permutation(n: int, seed: int) -> np.ndarray:
    """Fisher-Yates shuffle driven by raw PCG64 output.

    Only the PCG64 bit stream is used (not numpy's Generator sampling
    routines), so the permutation is fixed by the seed alone.
    """
    bitgen = np.random.PCG64(seed)
    perm = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = _bounded(bitgen, i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def split_tags(n: int, seed: int, fraction: float = 0.8) -> list[str]:
    n_train = int(round(n * fraction))
    perm = seeded_permutation(n, seed)
    tags = ["test"] * n
    for i in perm[:n_train]:
        tags[i] = "train"
    return tags


# -- corpus generation --------------------------------------------------------

def image_name(label, n_photon: int) -> str:
    return f"{StateClass.parse(label).slug}_{n_photon:03}.png"


def worker_count() -> int:
    env = os.environ.get("CATWIG_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _render_job(job: tuple[int, int, int, str]) -> str:
    label, n, resolution, out_dir = job
    rec = render_state(label, n, resolution)
    path = Path(out_dir) / image_name(label, n)
    write_png(path, rec.pixels)
    return path.name


def read_meta(corpus_dir) -> dict[str, str]:
    path = Path(corpus_dir) / META_NAME
    if not path.exists():
        return {}
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def generate_corpus(out_dir, resolution: int = 512, n_range: Sequence[int] = range(1, 101),
                    seed: int = 0, split_fraction: float = 0.8, overwrite: bool = False,
                    classes: Sequence[StateClass] = tuple(StateClass),
                    workers: int | None = None) -> CorpusManifest:
    """Render every (class, n) image to ``out_dir`` and write the manifest.

    Output is byte-identical for a fixed seed and configuration.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    existing = [p for p in out_dir.iterdir()]
    if existing and not overwrite:
        raise FileExistsError(f"{out_dir} is not empty; pass overwrite=True to replace it")
    for p in existing:
        if p.is_file() and (p.suffix == ".png" or p.name in (MANIFEST_NAME, META_NAME)):
            p.unlink()

    jobs = [(int(c), int(n), int(resolution), str(out_dir)) for c in classes for n in n_range]
    workers = workers or worker_count()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            names = list(pool.map(_render_job, jobs))
    else:
        names = [_render_job(j) for j in jobs]

    tags = split_tags(len(jobs), seed, split_fraction)
    entries = [ManifestEntry(name, job[0], job[1], tag) for name, job, tag in zip(names, jobs, tags)]
    manifest = CorpusManifest(entries, seed, split_fraction, out_dir)
    manifest.write(out_dir / MANIFEST_NAME)
    meta = {
        "seed": seed,
        "extent_rule": "sqrt(n)+4",
        "resolution": resolution,
        "colormap": COLORMAP_VERSION,
        "split_fraction": split_fraction,
        "count": len(entries),
    }
    (out_dir / META_NAME).write_text("".join(f"{k}={v}\n" for k, v in meta.items()), encoding="utf-8")
    return manifest


# -- preprocessing ------------------------------------------------------------

def bilinear(array: np.ndarray, side: int) -> np.ndarray:
    """Corner-aligned bilinear resampling of an (H, W, ...) float array."""
    h, w = array.shape[:2]

    def coords(n_in: int):
        if side == 1 or n_in == 1:
            pos = np.zeros(side)
        else:
            pos = np.arange(side) * ((n_in - 1) / (side - 1))
        lo = np.minimum(np.floor(pos).astype(int), n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = coords(h)
    x0, x1, fx = coords(w)
    extra = (1,) * (array.ndim - 2)
    fy = fy.reshape((-1, 1) + extra)
    fx = fx.reshape((1, -1) + extra)
    top = array[y0][:, x0] * (1 - fx) + array[y0][:, x1] * fx
    bottom = array[y1][:, x0] * (1 - fx) + array[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def resize_bilinear(img: ImageRecord, side: int) -> ImageRecord:
    if side < 8:
        raise ValueError("side must be at least 8")
    if img.pixels.shape[0] == side and img.pixels.shape[1] == side:
        pixels = img.pixels.copy()
    else:
        out = bilinear(img.pixels.astype(float), side)
        pixels = np.clip(_round_half_up(out), 0, 255).astype(np.uint8)
    return ImageRecord(pixels, img.label, img.n_photon, img.extent, side)


def to_input(img) -> np.ndarray:
    """RGBA bytes -> channel-first float array scaled to [0, 1]."""
    pixels = img.pixels if isinstance(img, ImageRecord) else np.asarray(img)
    return np.transpose(pixels, (2, 0, 1)).astype(np.float64) / 255.0


def load_record(manifest: CorpusManifest, entry: ManifestEntry) -> ImageRecord:
    pixels = read_png(manifest.resolve(entry))
    extent = qstate.default_extent(entry.n_photon) if entry.n_photon > 0 else 0.0
    return ImageRecord(pixels, StateClass.parse(entry.label), entry.n_photon, extent, pixels.shape[0])


def load_split(manifest: CorpusManifest, split: str, side: int | None = None,
               dtype=np.float32) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Read, resize and scale every image tagged ``split``."""
    entries = manifest.select(split)
    if not entries:
        raise EmptySplitError(f"split {split!r} is empty")
    xs = []
    for e in entries:
        rec = load_record(manifest, e)
        if side is not None:
            rec = resize_bilinear(rec, side)
        xs.append(to_input(rec).astype(dtype))
    targets = np.array([e.label for e in entries], dtype=np.int64)
    return np.stack(xs), targets, [e.path for e in entries]


def epoch_order(count: int, epoch_seed: int) -> np.ndarray:
    return seeded_permutation(count, epoch_seed)


def iter_batches(inputs: np.ndarray, targets: np.ndarray, batch_size: int, epoch_seed: int | None,
                 paths: Sequence[str] | None = None) -> Iterator[Batch]:
    """Yield batches of a preloaded split; ``epoch_seed=None`` keeps file order."""
    count = len(targets)
    if count == 0:
        raise EmptySplitError("no items to batch")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    order = np.arange(count) if epoch_seed is None else epoch_order(count, epoch_seed)
    for start in range(0, count, batch_size):
        idx = order[start:start + batch_size]
        batch_paths = [paths[i] for i in idx] if paths is not None else []
        yield Batch(inputs[idx], targets[idx], batch_paths)


def make_batches(manifest: CorpusManifest, split: str, batch_size: int, epoch_seed: int | None,
                 side: int | None = None, loader: Callable | None = None) -> list[Batch]:
    loader = loader or load_split
    if not manifest.select(split):
        raise EmptySplitError(f"split {split!r} is empty")
    x, y, paths = loader(manifest, split, side)
    return list(iter_batches(x, y, batch_size, epoch_seed, paths))


def batch_count(items: int, batch_size: int) -> int:
    return math.ceil(items / batch_size)
