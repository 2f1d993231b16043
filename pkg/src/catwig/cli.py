"""Command-line entry point: ``catwig <command> ...``.

Settings resolve as built-in defaults, then a flat ``key=value`` file given
with ``--config``, then explicit flags.
"""

from __future__ import annotations

import argparse
import collections
import logging
import shutil
import sys
from pathlib import Path

from . import render, trainpipe
from .models import MODEL_NAMES, WidthConfig, audit_csv, audit_params, build_model, format_audit
from .qstate import StateClass

log = logging.getLogger("catwig")

GENERATE_DEFAULTS = dict(resolution=512, seed=0, split_fraction=0.8)


class UsageError(Exception):
    pass


def merge_settings(defaults: dict, config_file: str | None, flags: dict) -> dict:
    """defaults < config file < flags (flags set to None are treated as absent)."""
    merged = dict(defaults)
    if config_file:
        values = trainpipe.read_config(Path(config_file))
        unknown = sorted(set(values) - set(defaults))
        if unknown:
            raise UsageError(f"{config_file}: unknown keys {', '.join(unknown)}")
        for k, v in values.items():
            merged[k] = v if defaults[k] is None else type(defaults[k])(v)
    merged.update({k: v for k, v in flags.items() if v is not None})
    return merged


class _Cleanup:
    """Remove a freshly created output path unless the command completed."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.existed = self.path.exists()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None and not self.existed and self.path.exists():
            if self.path.is_dir():
                shutil.rmtree(self.path, ignore_errors=True)
            else:
                self.path.unlink()
        return False


# -- commands -----------------------------------------------------------------

def cmd_generate(args) -> int:
    s = merge_settings(GENERATE_DEFAULTS, args.config,
                       dict(resolution=args.resolution, seed=args.seed, split_fraction=args.split_fraction))
    if s["resolution"] < 2:
        raise UsageError("--resolution must be at least 2")
    out = Path(args.out)
    with _Cleanup(out):
        manifest = render.generate_corpus(out, resolution=s["resolution"], seed=s["seed"],
                                          split_fraction=s["split_fraction"], overwrite=args.overwrite)
    counts = collections.Counter(e.label for e in manifest.entries)
    for c in StateClass:
        print(f"{c.slug}: {counts.get(int(c), 0)}")
    n_train, n_test = len(manifest.select("train")), len(manifest.select("test"))
    print(f"{len(manifest.entries)} images, {n_train} train / {n_test} test")
    print(f"manifest: {out / render.MANIFEST_NAME}")
    return 0


def _train_config(args) -> tuple[trainpipe.TrainConfig, dict]:
    base = trainpipe.TrainConfig.desk_scale(model="resnet") if args.desk_scale else trainpipe.TrainConfig()
    defaults = {**base.as_dict(), "corpus": None}
    flags = dict(model=args.model, corpus=args.corpus, side=args.side, width_mult=args.width_mult,
                 epochs=args.epochs, lr=args.lr, seed=args.seed, batch_size=args.batch_size,
                 precision=args.precision)
    s = merge_settings(defaults, args.config, flags)
    corpus = s.pop("corpus")
    if corpus is None:
        raise UsageError("--corpus is required (flag or config file)")
    try:
        config = trainpipe.TrainConfig(**s)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    extra = {"corpus": str(Path(corpus).resolve()), "profile": "desk-scale" if args.desk_scale else "default",
             "with_optimizer": int(args.with_optimizer)}
    return config, extra


def cmd_train(args) -> int:
    config, extra = _train_config(args)
    manifest = render.CorpusManifest.read(extra["corpus"])
    run_dir = Path(args.runs_dir) / args.run
    if run_dir.exists() and any(run_dir.iterdir()) and not args.overwrite:
        raise FileExistsError(f"run directory {run_dir} is not empty; pass --overwrite")

    def progress(epoch, loss):
        print(f"epoch {epoch}/{config.epochs} loss {loss:.6f}", flush=True)

    if run_dir.exists():
        shutil.rmtree(run_dir)
    with _Cleanup(run_dir):
        record = trainpipe.run_experiment(config, manifest, run_dir, extra, progress=progress,
                                          with_optimizer=args.with_optimizer)
    errors = sum(not p.correct for p in record.predictions)
    print(f"test accuracy {record.test_accuracy:.4f} ({len(record.predictions) - errors}/{len(record.predictions)})")
    print(f"run: {run_dir}")
    return 0


def cmd_evaluate(args) -> int:
    run_dir = Path(args.runs_dir) / args.run
    if not run_dir.is_dir():
        raise FileNotFoundError(f"run directory not found: {run_dir}")
    config, model = trainpipe.load_run_model(run_dir)
    corpus = args.corpus or trainpipe.read_config(run_dir / trainpipe.CONFIG_NAME).get("corpus")
    if not corpus:
        raise UsageError("no corpus recorded in config.txt; pass --corpus")
    manifest = render.CorpusManifest.read(corpus)
    result = trainpipe.evaluate(model, manifest, args.split, config.side)
    suffix = "" if args.split == "test" else f"_{args.split}"
    trainpipe.write_eval(run_dir, result, suffix)
    trainpipe.export_mispredictions(result.predictions, manifest, run_dir / f"mispredictions{suffix}")
    print(f"{args.split} accuracy {result.accuracy:.4f} ({result.correct}/{result.total})")
    for c, row in zip(StateClass, result.confusion):
        print(f"  {c.slug:>8}: " + " ".join(f"{int(v):3d}" for v in row))
    return 0


def cmd_render_wigner(args) -> int:
    try:
        label = StateClass.parse(args.cls)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.resolution < 2:
        raise UsageError("--resolution must be at least 2")
    if args.extent is not None and args.extent <= 0:
        raise UsageError("--extent must be positive")
    img = render.render_state(label, args.n, args.resolution, args.extent)
    out = Path(args.out)
    with _Cleanup(out):
        render.write_png(out, img.pixels)
    print(f"wrote {out} ({label.slug}, n={args.n}, extent={img.extent:g}, {args.resolution}px)")
    return 0


def cmd_audit(args) -> int:
    try:
        model = build_model(args.model, WidthConfig(args.side, args.width_mult), materialize=False)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rows = audit_params(model)
    sys.stdout.write(format_audit(rows))
    if args.csv:
        out = Path(args.csv)
        with _Cleanup(out):
            out.write_text(audit_csv(rows), encoding="utf-8")
        print(f"csv: {out}")
    return 0


# -- parser -------------------------------------------------------------------

def _class_choices() -> str:
    return ", ".join(c.slug for c in StateClass)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="catwig", description="Wigner-image corpus, CNN training and audits.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render the 400-image corpus")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--resolution", type=int, help="image side in pixels (default 512)")
    g.add_argument("--seed", type=int, help="split seed (default 0)")
    g.add_argument("--split-fraction", type=float, help="train fraction (default 0.8)")
    g.add_argument("--overwrite", action="store_true", help="replace an existing corpus")
    g.add_argument("--config", help="key=value settings file")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model and fill a run directory")
    t.add_argument("--model", choices=MODEL_NAMES)
    t.add_argument("--corpus", help="corpus directory (contains manifest.csv)")
    t.add_argument("--run", required=True, help="run name")
    t.add_argument("--runs-dir", default="runs", help="parent of run directories (default runs)")
    t.add_argument("--side", type=int)
    t.add_argument("--width-mult", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--precision", choices=sorted(trainpipe.PRECISIONS))
    t.add_argument("--desk-scale", action="store_true",
                   help="reduced CPU profile: side 32, width 0.25, 30 epochs, lr 1e-3")
    t.add_argument("--with-optimizer", action="store_true", help="store Adam state in the checkpoint")
    t.add_argument("--overwrite", action="store_true", help="replace an existing run directory")
    t.add_argument("--config", help="key=value settings file")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a trained run")
    e.add_argument("--run", required=True)
    e.add_argument("--runs-dir", default="runs")
    e.add_argument("--split", choices=("test", "train"), default="test")
    e.add_argument("--corpus", help="override the corpus recorded in config.txt")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("render-wigner", help="render one state to PNG")
    r.add_argument("--class", dest="cls", required=True, help=_class_choices())
    r.add_argument("--n", type=int, required=True, help="mean photon number, 1..100")
    r.add_argument("--out", required=True)
    r.add_argument("--extent", type=float, help="half-width of the phase-space window (default sqrt(n)+4)")
    r.add_argument("--resolution", type=int, default=512)
    r.set_defaults(func=cmd_render_wigner)

    a = sub.add_parser("audit", help="print per-layer output shapes and parameter counts")
    a.add_argument("--model", choices=MODEL_NAMES, required=True)
    a.add_argument("--side", type=int, default=128)
    a.add_argument("--width-mult", type=float, default=1.0)
    a.add_argument("--csv", help="also write the table as CSV")
    a.set_defaults(func=cmd_audit)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (OSError, ValueError, KeyError, FloatingPointError, RuntimeError) as exc:
        print(f"catwig: error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
