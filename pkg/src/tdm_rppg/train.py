"""Training loop, checkpoints, HR evaluation protocols and ablation drivers."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import container
from . import tensor as tn
from .data_io import CLIP_LENGTH, Clip, Record, chunk_sequences, record_clips
from .dsp import heart_rate
from .losses import LOSSES, ShiftRegistry, clip_loss
from .model import Architecture, TdmModel, count_macs, count_params
from .optim import SGD, Adadelta

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    pass


class EvaluationError(ValueError):
    pass


@dataclass
class TrainConfig:
    loss: str = "mse"
    order: int = 2
    epochs: int = 50
    batch_size: int = 4
    lr: float = 1.0
    rho: float = 0.9
    eps: float = 1e-6
    sgd_lr: float | None = None
    seed: int = 0
    precision: str = "f64"
    c1: int = 16
    c2: int = 32
    fps: float = 30.0
    clip_length: int = CLIP_LENGTH
    even_shifts: bool = False

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.loss == "talos" and self.sgd_lr is None:
            self.sgd_lr = 0.01
        if self.loss != "talos" and self.sgd_lr is not None:
            raise ValueError("sgd_lr only applies to the talos loss")
        if self.precision not in tn.DTYPES:
            raise ValueError(f"precision must be one of {sorted(tn.DTYPES)}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    def architecture(self, height: int, width: int) -> Architecture:
        return Architecture(self.c1, self.c2, self.order, height, width)


@dataclass
class TrainResult:
    model: TdmModel
    registry: ShiftRegistry | None
    config: TrainConfig
    log: list[dict] = field(default_factory=list)


# -- checkpoints ------------------------------------------------------------------

def save_checkpoint(path, model: TdmModel, registry: ShiftRegistry | None = None,
                    config: TrainConfig | None = None) -> None:
    arrays = {f"model/{k}": v for k, v in model.state_dict().items()}
    meta = {"kind": "checkpoint", "architecture": model.arch.to_dict(),
            "precision": "f32" if model.dtype == np.float32 else "f64"}
    if registry is not None:
        arrays.update(registry.state())
        meta["shifts"] = {"fs": registry.fs, "even_only": registry.even_only}
    if config is not None:
        meta["config"] = asdict(config)
    container.save(path, arrays, meta)


def load_checkpoint(path, expected: Architecture | None = None):
    """Returns ``(model, registry_or_None, meta)``."""
    arrays, meta = container.load(path)
    if meta.get("kind") != "checkpoint":
        raise container.ContainerError(f"{path}: not a checkpoint")
    arch = Architecture(**meta["architecture"])
    if expected is not None and expected != arch:
        raise ValueError(f"checkpoint architecture {arch} does not match expected {expected}")
    model = TdmModel(arch, dtype=tn.DTYPES[meta.get("precision", "f64")])
    model.load_state_dict({k[len("model/"):]: v for k, v in arrays.items() if k.startswith("model/")})
    registry = None
    if "shifts" in meta:
        registry = ShiftRegistry(fs=meta["shifts"]["fs"], even_only=meta["shifts"]["even_only"])
        registry.load_state({k: v for k, v in arrays.items() if k.startswith("theta/")})
    return model, registry, meta


# -- training ---------------------------------------------------------------------

def _as_clips(data, length: int) -> list[Clip]:
    data = list(data)
    if data and isinstance(data[0], Clip):
        return data
    return record_clips(data, length)


def train(config: TrainConfig, dataset, out_dir=None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Fit a fresh model on ``dataset`` (records or clips).

    One backward pass per mini-batch feeds both optimisers: Adadelta on the
    network parameters and, for TALOS, SGD on the shift logits.
    """
    clips = _as_clips(dataset, config.clip_length)
    if not clips:
        raise ValueError("training set is empty")
    dtype = tn.DTYPES[config.precision]
    h, w = clips[0].frames.shape[2:]
    model = TdmModel(config.architecture(h, w), seed=config.seed, dtype=dtype)
    registry = None
    if config.loss == "talos":
        registry = ShiftRegistry(fs=config.fps, even_only=config.even_shifts)
        for c in clips:
            registry.register(c.subject_id)
    opt = Adadelta(model.parameters(), lr=config.lr, rho=config.rho, eps=config.eps)
    theta_opt = SGD(registry.parameters(), lr=config.sgd_lr) if registry is not None else None
    rng = np.random.default_rng(config.seed)
    frames = [np.asarray(c.frames, dtype=dtype) for c in clips]
    history: list[dict] = []
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        perm = rng.permutation(len(clips))
        total, count = 0.0, 0
        for b in range(0, len(perm), config.batch_size):
            idx = perm[b:b + config.batch_size]
            opt.zero_grad()
            if theta_opt is not None:
                theta_opt.zero_grad()
            try:
                losses = [clip_loss(config.loss, model(frames[i], "train"), clips[i].ppg,
                                    clips[i].subject_id, registry, config.fps) for i in idx]
                batch_loss = tn.sum_(tn.stack(losses)) / float(len(idx))
                tn.backward(batch_loss)
            except tn.NonFiniteError as err:
                raise TrainingAborted(f"epoch {epoch} batch {b // config.batch_size}: {err}") from err
            opt.step()
            if theta_opt is not None:
                theta_opt.step()
            bad = tn.parameters_finite(model.named_parameters()
                                       + [(f"theta[{p.name}]", p) for p in (registry.parameters() if registry else [])])
            if bad is not None:
                raise TrainingAborted(f"epoch {epoch}: non-finite values in {bad}")
            total += batch_loss.item() * len(idx)
            count += len(idx)
        entry = {"epoch": epoch, "loss": total / count, "lr": config.lr,
                 "wall_time": round(time.perf_counter() - t0, 3)}
        if registry is not None:
            entry["sgd_lr"] = config.sgd_lr
        history.append(entry)
        log.debug("epoch %d loss %.6f", epoch, entry["loss"])
        if on_epoch is not None:
            on_epoch(entry)
    result = TrainResult(model, registry, config, history)
    if out_dir is not None:
        write_training_outputs(result, out_dir)
    return result


def write_training_outputs(result: TrainResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.tdmc", result.model, result.registry, result.config)
    with open(out / "train_log.jsonl", "w") as fh:
        for entry in result.log:
            fh.write(json.dumps(entry) + "\n")
    if result.registry is not None:
        result.registry.save_table(out / "shift_probabilities.tsv")


# -- evaluation -----------------------------------------------------------------

def hr_metrics(gt: Sequence[float], pred: Sequence[float]) -> tuple[float, float, float]:
    """MAE, RMSE and Pearson R of heart-rate lists (R is NaN when undefined)."""
    gt, pred = np.asarray(gt, dtype=float), np.asarray(pred, dtype=float)
    if gt.shape != pred.shape or gt.size == 0:
        raise ValueError("need equal-length, non-empty HR lists")
    err = pred - gt
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err ** 2)))
    if np.array_equal(gt, pred):
        r = 1.0
    elif gt.std() == 0 or pred.std() == 0:
        r = float("nan")
    else:
        r = float(np.clip(np.corrcoef(gt, pred)[0, 1], -1.0, 1.0))
    return mae, rmse, r


@dataclass
class EvalReport:
    protocol: str
    rows: list[dict]
    mae: float
    rmse: float
    r: float
    params: int
    macs: int

    def summary(self) -> dict:
        return {"protocol": self.protocol, "mae": self.mae, "rmse": self.rmse, "r": self.r,
                "params": self.params, "macs": self.macs, "n": len(self.rows)}

    def to_json(self) -> str:
        return json.dumps({**self.summary(), "rows": self.rows}, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["video_id", "clip", "gt_bpm", "pred_bpm"])
        writer.writeheader()
        for row in self.rows:
            writer.writerow(row)
        return buf.getvalue()

    def save(self, out_dir, stem: str = "eval") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.json").write_text(self.to_json())
        (out / f"{stem}.csv").write_text(self.to_csv())


def predict_clips(model: TdmModel, records: Sequence[Record], length: int = CLIP_LENGTH):
    """Yields ``(record, clips, predictions)`` per record."""
    for r in records:
        clips = chunk_sequences(r.video, r.groundtruth, length, video_id=r.video_id, subject_id=r.subject_id)
        yield r, clips, [model.predict(c.frames) for c in clips]


def evaluate(model, records: Sequence[Record], protocol: str = "sequence",
             video_hr: str = "concat", length: int = CLIP_LENGTH) -> EvalReport:
    """Score HR per clip (``sequence``) or per video (``whole_video``).

    Whole-video HR is read from the concatenated clip predictions with one
    spectrum (``video_hr="concat"``) or as the mean of clip HRs (``"clip_mean"``).
    """
    if isinstance(model, (str, Path)):
        model = load_checkpoint(model)[0]
    if protocol not in ("sequence", "whole_video"):
        raise ValueError(f"unknown protocol {protocol!r}")
    if video_hr not in ("concat", "clip_mean"):
        raise ValueError(f"unknown whole-video mode {video_hr!r}")
    rows = []
    for rec, clips, preds in predict_clips(model, records, length):
        if not clips:
            raise EvaluationError(f"{rec.video_id}: {rec.n_frames} frames gives no {length}-frame clip for protocol {protocol!r}")
        fs = rec.video.fps
        if protocol == "sequence":
            for c, p in zip(clips, preds):
                rows.append({"video_id": rec.video_id, "clip": c.index,
                             "gt_bpm": heart_rate(c.ppg, fs), "pred_bpm": heart_rate(p, fs)})
        elif video_hr == "concat":
            rows.append({"video_id": rec.video_id, "clip": None,
                         "gt_bpm": heart_rate(np.concatenate([c.ppg for c in clips]), fs),
                         "pred_bpm": heart_rate(np.concatenate(preds), fs)})
        else:
            rows.append({"video_id": rec.video_id, "clip": None,
                         "gt_bpm": float(np.mean([heart_rate(c.ppg, fs) for c in clips])),
                         "pred_bpm": float(np.mean([heart_rate(p, fs) for p in preds]))})
    if not rows:
        raise EvaluationError("no records to evaluate")
    mae, rmse, r = hr_metrics([x["gt_bpm"] for x in rows], [x["pred_bpm"] for x in rows])
    h, w = records[0].video.frames.shape[2:]
    return EvalReport(protocol, rows, mae, rmse, r, count_params(model), count_macs(model, length, h, w))


# -- ablation -------------------------------------------------------------------------

ABLATION_FIELDS = ["order", "loss", "seed", "epochs", "seq_mae", "seq_rmse", "seq_r",
                   "video_mae", "video_rmse", "video_r", "params"]


def ablate(train_records: Sequence[Record], test_records: Sequence[Record], base: TrainConfig,
           orders: Sequence[int] = (0, 1, 2), losses: Sequence[str] = LOSSES) -> list[dict]:
    """Train one model per (order, loss) cell on the same data and seed; returns table rows."""
    rows = []
    for order in orders:
        for loss in losses:
            cfg = replace(base, order=order, loss=loss,
                          sgd_lr=(base.sgd_lr or 0.01) if loss == "talos" else None)
            result = train(cfg, train_records)
            seq = evaluate(result.model, test_records, "sequence", length=cfg.clip_length)
            vid = evaluate(result.model, test_records, "whole_video", length=cfg.clip_length)
            rows.append({"order": order, "loss": loss, "seed": cfg.seed, "epochs": cfg.epochs,
                         "seq_mae": seq.mae, "seq_rmse": seq.rmse, "seq_r": seq.r,
                         "video_mae": vid.mae, "video_rmse": vid.rmse, "video_r": vid.r,
                         "params": seq.params})
    return rows


def table_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=ABLATION_FIELDS)
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()
