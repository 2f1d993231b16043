"""Training loop, evaluation, and run-directory outputs."""

from __future__ import annotations

import csv
import dataclasses
import logging
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import render
from .models import CLASS_COUNT, MODEL_NAMES, WidthConfig, build_model
from .nn import Adam, ModelGraph, load_checkpoint, save_checkpoint, softmax, softmax_cross_entropy
from .qstate import StateClass

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.cwnn"
CONFIG_NAME = "config.txt"
PRECISIONS = {"single": np.float32, "double": np.float64}

# reduced profile for CPU-speed runs; not the published configuration
DESK_SCALE = dict(side=32, width_mult=0.25, epochs=30, lr=1e-3)


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    model: str = "resnet"
    epochs: int = 100
    batch_size: int = 16
    lr: float = 1e-5
    optimizer: str = "adam"
    loss: str = "cross_entropy"
    seed: int = 0
    precision: str = "single"
    width_mult: float = 1.0
    side: int = 128

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.model not in MODEL_NAMES:
            raise ValueError(f"unknown model {self.model!r}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")
        if self.optimizer != "adam" or self.loss != "cross_entropy":
            raise ValueError("only adam + cross_entropy are supported")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        WidthConfig(self.side, self.width_mult)

    @classmethod
    def desk_scale(cls, **overrides) -> "TrainConfig":
        return cls(**{**DESK_SCALE, **overrides})

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        """Build from string values (config files, CLI); unknown keys are rejected."""
        base = cls()
        unknown = sorted(set(values) - set(base.as_dict()))
        if unknown:
            raise KeyError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**{k: type(getattr(base, k))(v) for k, v in values.items()})


@dataclass
class Prediction:
    path: str
    true_label: int
    predicted: int
    probabilities: np.ndarray

    @property
    def correct(self) -> bool:
        return self.true_label == self.predicted


@dataclass
class EvalResult:
    split: str
    correct: int
    total: int
    predictions: list[Prediction]
    confusion: np.ndarray  # rows = true class, cols = predicted

    @property
    def accuracy(self) -> float:
        return self.correct / self.total


@dataclass
class RunRecord:
    model: str
    epoch_losses: list[float] = field(default_factory=list)
    batch_losses: list[list[float]] = field(default_factory=list)
    test_accuracy: float | None = None
    predictions: list[Prediction] = field(default_factory=list)
    wall_time: float = 0.0


def epoch_seed(seed: int, epoch: int) -> list[int]:
    return [seed, epoch]


def write_config(path: Path, values: dict) -> None:
    path.write_text("".join(f"{k}={v}\n" for k, v in values.items()), encoding="utf-8")


def read_config(path: Path) -> dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def train(config: TrainConfig, manifest: render.CorpusManifest, run_dir: Path | None = None,
          loader: Callable = render.load_split, model: ModelGraph | None = None,
          progress: Callable[[int, float], None] | None = None,
          with_optimizer: bool = False) -> tuple[RunRecord, ModelGraph]:
    """Train on the manifest's train split; only train-tagged images are read.

    Returns the record (losses per batch and per epoch) and the trained model.
    With ``run_dir`` set, the final checkpoint and ``loss.csv`` are written there;
    Adam moments are included in the checkpoint when ``with_optimizer`` is true.
    """
    start = time.perf_counter()
    x, y, _ = loader(manifest, "train", config.side)
    if x.shape[1:] != (4, config.side, config.side):
        raise ValueError(f"corpus images have shape {x.shape[1:]}, config expects side {config.side}")
    x = x.astype(config.dtype, copy=False)
    if model is None:
        model = build_model(config.model, WidthConfig(config.side, config.width_mult), config.seed,
                            dtype=config.dtype)
    model.reseed(config.seed)
    opt = Adam(model, lr=config.lr)
    record = RunRecord(config.model)
    for epoch in range(config.epochs):
        losses = []
        for b, batch in enumerate(render.iter_batches(x, y, config.batch_size, epoch_seed(config.seed, epoch))):
            model.zero_grad()
            try:
                logits = model.forward(batch.inputs, training=True)
                loss, grad = softmax_cross_entropy(logits, batch.targets, CLASS_COUNT)
                if not np.isfinite(loss):
                    raise FloatingPointError(f"loss is {loss}")
                model.backward(grad.astype(config.dtype, copy=False))
            except FloatingPointError as exc:
                raise TrainingDivergedError(f"diverged at epoch {epoch + 1}, batch {b + 1}: {exc}") from exc
            opt.step()
            losses.append(loss)
        record.batch_losses.append(losses)
        record.epoch_losses.append(float(np.mean(losses)))
        log.info("%s epoch %d/%d loss %.6f", config.model, epoch + 1, config.epochs, record.epoch_losses[-1])
        if progress is not None:
            progress(epoch + 1, record.epoch_losses[-1])
    record.wall_time = time.perf_counter() - start
    if run_dir is not None:
        run_dir = Path(run_dir)
        save_checkpoint(run_dir / CHECKPOINT_NAME, model, opt.state if with_optimizer else None)
        write_loss_csv(run_dir / "loss.csv", record.epoch_losses)
    return record, model


def evaluate(model: ModelGraph, manifest: render.CorpusManifest, split: str = "test",
             side: int | None = None, batch_size: int = 16,
             loader: Callable = render.load_split) -> EvalResult:
    """Eval-mode accuracy over one split (running BN statistics, no dropout)."""
    side = side or model.input_spec[1]
    x, y, paths = loader(manifest, split, side)
    logits = model.predict_logits(x, batch_size)
    probs = softmax(logits.astype(np.float64))
    pred = probs.argmax(axis=1)
    confusion = np.zeros((CLASS_COUNT, CLASS_COUNT), dtype=np.int64)
    np.add.at(confusion, (y, pred), 1)
    preds = [Prediction(p, int(t), int(q), pr) for p, t, q, pr in zip(paths, y, pred, probs)]
    return EvalResult(split, int((pred == y).sum()), len(y), preds, confusion)


def load_run_model(run_dir: Path) -> tuple[TrainConfig, ModelGraph]:
    run_dir = Path(run_dir)
    cfg_path = run_dir / CONFIG_NAME
    ckpt = run_dir / CHECKPOINT_NAME
    if not cfg_path.exists():
        raise FileNotFoundError(f"missing {cfg_path}")
    if not ckpt.exists():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    values = read_config(cfg_path)
    train_keys = {f.name for f in dataclasses.fields(TrainConfig)}
    config = TrainConfig.from_dict({k: v for k, v in values.items() if k in train_keys})
    model = build_model(config.model, WidthConfig(config.side, config.width_mult), config.seed,
                        dtype=config.dtype)
    load_checkpoint(ckpt, model)
    return config, model


# -- outputs ------------------------------------------------------------------

def write_loss_csv(path: Path, losses: Sequence[float]) -> None:
    if not len(losses):
        raise ValueError("no epoch losses to write")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(losses, 1):
            w.writerow([i, repr(float(v))])


def write_eval(run_dir: Path, result: EvalResult, suffix: str = "") -> None:
    with open(run_dir / f"metrics{suffix}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "correct", "total", "accuracy"])
        w.writerow([result.split, result.correct, result.total, repr(result.accuracy)])
    with open(run_dir / f"confusion{suffix}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred"] + [c.slug for c in StateClass])
        for c, row in zip(StateClass, result.confusion):
            w.writerow([c.slug] + [int(v) for v in row])


def export_curves(records, out: Path) -> list[Path]:
    """Write ``epoch,loss`` CSV(s) and a line plot with one series per record.

    ``records`` is a RunRecord or a sequence of them; with several records,
    each CSV is suffixed by the model name.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if isinstance(records, RunRecord):
        records = [records]
    records = list(records)
    if not records or any(not r.epoch_losses for r in records):
        raise ValueError("cannot export an empty loss curve")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for r in records:
        name = "loss.csv" if len(records) == 1 else f"loss_{r.model}.csv"
        write_loss_csv(out / name, r.epoch_losses)
        written.append(out / name)
    fig, ax = plt.subplots(figsize=(6, 4))
    for r in records:
        ax.plot(np.arange(1, len(r.epoch_losses) + 1), r.epoch_losses, label=r.model)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "loss.png", dpi=100)
    plt.close(fig)
    written.append(out / "loss.png")
    return written


WRONG_COLOR = (220, 0, 0)
RIGHT_COLOR = (0, 0, 220)


def annotate(pixels: np.ndarray, text: str, color: tuple) -> "Image.Image":
    from PIL import Image, ImageDraw

    img = Image.fromarray(pixels, mode="RGBA").convert("RGB")
    bar = 24
    canvas = Image.new("RGB", (img.width, img.height + bar), (255, 255, 255))
    canvas.paste(img, (0, 0))
    ImageDraw.Draw(canvas).text((4, img.height + 6), text, fill=color)
    return canvas


def export_mispredictions(predictions: Sequence[Prediction], manifest: render.CorpusManifest,
                          out: Path, include_correct: bool = False) -> list[Path]:
    """Save each misclassified image with a red caption (blue for correct ones)."""
    out = Path(out)
    if out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True)
    by_path = {e.path: e for e in manifest.entries}
    wrong = [p for p in predictions if not p.correct]
    chosen = predictions if include_correct else wrong
    written = []
    lines = [f"mispredictions: {len(wrong)} / {len(predictions)}", "file,path,true,predicted,correct"]
    for p in chosen:
        entry = by_path[p.path]
        pixels = render.read_png(manifest.resolve(entry))
        true_name = StateClass(p.true_label).slug
        pred_name = StateClass(p.predicted).slug
        color = RIGHT_COLOR if p.correct else WRONG_COLOR
        img = annotate(pixels, f"true: {true_name}  pred: {pred_name}", color)
        tag = "ok" if p.correct else "wrong"
        name = f"{tag}_{Path(p.path).stem}_as_{pred_name}.png"
        img.save(out / name)
        written.append(out / name)
        lines.append(f"{name},{p.path},{true_name},{pred_name},{int(p.correct)}")
    (out / "index.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return written


def run_experiment(config: TrainConfig, manifest: render.CorpusManifest, run_dir: Path,
                   extra_config: dict | None = None, progress=None,
                   with_optimizer: bool = False) -> RunRecord:
    """Train, evaluate on the test split, and fill the run directory."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_config(run_dir / CONFIG_NAME, {**config.as_dict(), **(extra_config or {})})
    record, model = train(config, manifest, run_dir, progress=progress, with_optimizer=with_optimizer)
    result = evaluate(model, manifest, "test", config.side)
    record.test_accuracy = result.accuracy
    record.predictions = result.predictions
    write_eval(run_dir, result)
    export_curves(record, run_dir)
    export_mispredictions(result.predictions, manifest, run_dir / "mispredictions")
    return record
