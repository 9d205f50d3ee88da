"""Training and evaluation orchestration.

Frames are transformed once per split: FFT, then centered bin order
(np.fft.fftshift), matching the label bin mapping so prediction bin i and
label bin i refer to the same frequency slot.  Real-mode models consume
the magnitude of the same centered spectrum.

A training run owns one model and one Adam state; epochs shuffle with a
per-epoch seeded generator, so a (seed, config, dataset) triple fully
determines the learned parameters.  Validation runs the model in eval
mode and never touches parameters or running statistics.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, asdict

import numpy as np

from .cmodel import AdamState, Model, ModelConfig, build, load_checkpoint, save_checkpoint
from .ctensor import fft_array
from .dataset import Dataset
from .errors import ConfigInvalid, DatasetEmpty
from .objectives import (REDUCE_LR, STOP, OccupancyMask, Segment, binarize,
                         boxes_array_from_masks, cbce, cfl, ciou_matrix, extract_segments,
                         match_segments, optimal_assignment, rbce, rfl, stopping_criterion)

LOSSES = ("cfl", "cbce", "rfl", "rbce")


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr_initial: float = 1e-3
    lr_reduced: float = 1e-4
    lr_patience: int = 3
    stop_patience: int = 3
    gamma: float = 1.0
    alpha: float = 3.0
    max_epochs: int = 30
    seed: int = 0
    loss: str = "cfl"
    mode: str = "complex"
    precision: str = "single"
    min_delta: float = 1e-4
    tau: float = 0.5

    def validate(self):
        if self.batch_size < 1:
            raise ConfigInvalid("batch_size must be >= 1")
        if self.lr_patience < 1 or self.stop_patience < 1:
            raise ConfigInvalid("patience values must be >= 1")
        if self.max_epochs < 0:
            raise ConfigInvalid("max_epochs must be >= 0")
        if self.loss not in LOSSES:
            raise ConfigInvalid(f"loss must be one of {LOSSES}")
        if self.mode not in ("complex", "real"):
            raise ConfigInvalid("mode must be complex or real")
        complex_loss = self.loss in ("cfl", "cbce")
        if complex_loss != (self.mode == "complex"):
            raise ConfigInvalid(f"loss {self.loss!r} does not fit mode {self.mode!r}")
        if self.precision not in ("single", "double"):
            raise ConfigInvalid("precision must be single or double")
        return self

    def loss_fn(self):
        if self.loss == "cfl":
            return lambda p, t: cfl(p, t, self.gamma, self.alpha)
        if self.loss == "cbce":
            return cbce
        if self.loss == "rfl":
            return lambda p, t: rfl(p, t, self.gamma, self.alpha)
        return rbce


@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    val_loss: float
    val_ciou: float
    val_acc05: float
    seconds: float


@dataclass
class SplitData:
    """One split prepared for the model: centered spectra plus targets."""

    inputs: np.ndarray        # [n, L] complex (complex mode) or real magnitudes
    targets: np.ndarray       # [n, L] occupancy, complex-packed in complex mode
    truth_segments: list      # per sample: list[Segment]
    snr_db: np.ndarray        # [n]


def prepare_split(dataset: Dataset, split: str, mode: str, precision: str) -> SplitData:
    length = dataset.input_bins
    cdtype = np.complex64 if precision == "single" else np.complex128
    rdtype = np.float32 if precision == "single" else np.float64
    inputs, targets, segments, snrs = [], [], [], []
    for rec in dataset.iterate(split):
        spec = np.fft.fftshift(fft_array(rec.frame.samples.astype(np.complex128)))
        segs = [Segment(l.begin_bin, l.end_bin) for l in rec.labels]
        occ = OccupancyMask.from_segments(segs, length)
        if mode == "complex":
            inputs.append(spec.astype(cdtype))
            targets.append(occ.as_complex())
        else:
            inputs.append(np.abs(spec).astype(rdtype))
            targets.append(occ.o_x)
        segments.append(segs)
        snrs.append(rec.sample_snr_db)
    n = len(inputs)
    if n == 0:
        return SplitData(np.zeros((0, length)), np.zeros((0, length)), [], np.zeros(0))
    return SplitData(np.stack(inputs), np.stack(targets), segments, np.asarray(snrs))


def _batches(n: int, batch_size: int, order=None):
    idx = np.arange(n) if order is None else order
    chunks = [idx[i:i + batch_size] for i in range(0, n, batch_size)]
    # batch norm needs >= 2 samples, so a trailing singleton joins its predecessor
    if len(chunks) >= 2 and len(chunks[-1]) == 1:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


# Predictions narrower than this can never reach IoU 0.5 against the
# narrowest configurable signal (0.1 MHz covers >= 8 bins after label
# broadening at desk scale, far more at finer bin widths), so they are
# noise blips by construction; suppressing them is lossless for the
# detection metrics, mirroring the energy detector's min_run rule.
PRED_MIN_WIDTH_BINS = 4


def predicted_segments(pred_row: np.ndarray, tau: float,
                       min_width: int = PRED_MIN_WIDTH_BINS) -> list[Segment]:
    """Segments from the magnitude-thresholded prediction of one sample."""
    _, _, mask_abs = binarize(pred_row, tau)
    return [s for s in extract_segments(mask_abs) if s.end - s.begin + 1 >= min_width]


def _val_ciou_score(pred_row: np.ndarray, truth_segs: list[Segment], tau: float) -> float:
    """Mean complex-plane IoU over truth boxes (unmatched truths score 0)."""
    mask_x, mask_y, _ = binarize(pred_row, tau)
    pred_boxes = boxes_array_from_masks(mask_x, mask_y)
    truth_mask = OccupancyMask.from_segments(truth_segs, pred_row.shape[0])
    truth_boxes = boxes_array_from_masks(truth_mask.o_x > 0.5, truth_mask.o_y > 0.5)
    if truth_boxes.shape[0] == 0:
        return 1.0 if pred_boxes.shape[0] == 0 else 0.0
    if pred_boxes.shape[0] == 0:
        return 0.0
    c = ciou_matrix(truth_boxes, pred_boxes)
    _, total = optimal_assignment(c)
    return float(total) / truth_boxes.shape[0]


def _validate_epoch(model: Model, data: SplitData, cfg: TrainConfig, loss_fn):
    n = data.inputs.shape[0]
    loss_total = 0.0
    ciou_scores = []
    accs = []
    for chunk in _batches(n, cfg.batch_size):
        out = model.forward(data.inputs[chunk], train=False)
        loss, _ = loss_fn(out, data.targets[chunk])
        loss_total += loss
        for row_i, sample_i in enumerate(chunk):
            row = out[row_i]
            truth = data.truth_segments[sample_i]
            ciou_scores.append(_val_ciou_score(row, truth, cfg.tau))
            acc, _, _ = match_segments(predicted_segments(row, cfg.tau), truth, 0.5)
            accs.append(acc)
    return loss_total / n, float(np.mean(ciou_scores)), float(np.mean(accs))


@dataclass
class TrainResult:
    model: Model
    reports: list
    best_epoch: int
    checkpoint_path: str | None
    lr_reduced_at: int | None = None


def _snapshot(model: Model):
    out = []
    for layer, name, kind in model.state_entries():
        a = layer.params[name] if kind == "param" else getattr(layer, name)
        out.append(a.copy())
    return out


def _restore(model: Model, snap):
    for (layer, name, kind), a in zip(model.state_entries(), snap):
        if kind == "param":
            layer.params[name] = a.copy()
        else:
            setattr(layer, name, a.copy())


def train(dataset: Dataset, model_config: ModelConfig, train_config: TrainConfig,
          out_dir: str | None = None, initial_model: Model | None = None) -> TrainResult:
    """Full training run with LR schedule, early stopping, best-val retention."""
    cfg = train_config.validate()
    if model_config.mode != cfg.mode:
        raise ConfigInvalid(f"model mode {model_config.mode!r} != training mode {cfg.mode!r}")
    if "train" not in dataset.splits() or "val" not in dataset.splits():
        raise DatasetEmpty("dataset needs train and val splits")
    train_data = prepare_split(dataset, "train", cfg.mode, cfg.precision)
    val_data = prepare_split(dataset, "val", cfg.mode, cfg.precision)
    n_train = train_data.inputs.shape[0]
    if n_train == 0 or val_data.inputs.shape[0] == 0:
        raise DatasetEmpty("train/val splits must be non-empty")

    model = initial_model if initial_model is not None else build(model_config, cfg.precision)
    opt = AdamState(model, learning_rate=cfg.lr_initial)
    loss_fn = cfg.loss_fn()

    reports: list[EpochReport] = []
    history = []
    best = None          # (val_ciou, -val_loss)
    best_epoch = 0
    best_snap = _snapshot(model)
    lr_reduced_at = None
    window_start = 0

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(epoch,)))
        order = rng.permutation(n_train)
        loss_total = 0.0
        for chunk in _batches(n_train, cfg.batch_size, order):
            out = model.forward(train_data.inputs[chunk], train=True)
            loss, grad = loss_fn(out, train_data.targets[chunk])
            model.backward(grad / len(chunk))
            opt.step(model)
            loss_total += loss
        train_loss = loss_total / n_train
        val_loss, val_ciou, val_acc = _validate_epoch(model, val_data, cfg, loss_fn)
        seconds = round(time.perf_counter() - t0, 3)
        reports.append(EpochReport(epoch, float(train_loss), float(val_loss),
                                   val_ciou, val_acc, seconds))
        history.append({"val_loss": val_loss, "val_ciou": val_ciou})

        score = (val_ciou, -val_loss)
        if best is None or score > best:
            best = score
            best_epoch = epoch
            best_snap = _snapshot(model)

        patience = cfg.lr_patience if lr_reduced_at is None else cfg.stop_patience
        decision = stopping_criterion(history, patience, cfg.min_delta,
                                      lr_reduction_available=lr_reduced_at is None,
                                      window_start=window_start)
        if decision == REDUCE_LR:
            opt.learning_rate = cfg.lr_reduced
            lr_reduced_at = epoch
            window_start = epoch  # give the reduced rate a fresh window
        elif decision == STOP:
            break

    _restore(model, best_snap)
    checkpoint_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        checkpoint_path = os.path.join(out_dir, "checkpoint.ckpt")
        metrics = {}
        if reports:
            r = reports[best_epoch - 1]
            metrics = {"val_loss": r.val_loss, "val_ciou": r.val_ciou, "val_acc05": r.val_acc05}
        save_checkpoint(checkpoint_path, model, epoch=best_epoch, metrics=metrics)
        write_epoch_reports(os.path.join(out_dir, "epoch_report.csv"), reports)
        meta = {
            "mode": cfg.mode,
            "loss": cfg.loss,
            "seed": cfg.seed,
            "train_config": asdict(cfg),
            "best_epoch": best_epoch,
            "epochs_run": len(reports),
            "lr_reduced_at": lr_reduced_at,
            "timing": timing_report(reports),
        }
        with open(os.path.join(out_dir, "meta.json"), "w", encoding="utf-8") as f:
            json.dump(meta, f, sort_keys=True, indent=2)
            f.write("\n")
    return TrainResult(model, reports, best_epoch, checkpoint_path, lr_reduced_at)


def fine_tune(checkpoint_path, dataset: Dataset, train_config: TrainConfig,
              out_dir: str | None = None) -> TrainResult:
    """Continue training from a stored checkpoint on a (new) dataset."""
    cfg = train_config.validate()
    model, header = load_checkpoint(checkpoint_path, expected_mode=cfg.mode)
    if model.precision != cfg.precision:
        raise ConfigInvalid(
            f"checkpoint precision {model.precision!r} != configured {cfg.precision!r}")
    return train(dataset, model.config, cfg, out_dir=out_dir, initial_model=model)


def evaluate(model_or_path, dataset: Dataset, split: str = "test",
             thresholds=(0.5, 0.9), tau: float = 0.5, batch_size: int = 64) -> list[dict]:
    """Per-SNR metric table (plus an 'all' row) for one split.

    Rows report accuracy and recall at the lower threshold, recall at the
    upper one, and the mean matched IoU, all averaged sample-wise.
    """
    model = model_or_path
    if isinstance(model, (str, bytes, os.PathLike)):
        model, _ = load_checkpoint(model)
    lo, hi = sorted(thresholds)
    data = prepare_split(dataset, split, model.mode, model.precision)
    n = data.inputs.shape[0]
    per_sample = []
    for chunk in _batches(n, batch_size):
        out = model.forward(data.inputs[chunk], train=False)
        for row_i, sample_i in enumerate(chunk):
            preds = predicted_segments(out[row_i], tau)
            truth = data.truth_segments[sample_i]
            acc, rec_lo, miou = match_segments(preds, truth, lo)
            _, rec_hi, _ = match_segments(preds, truth, hi)
            per_sample.append((data.snr_db[sample_i], acc, rec_lo, rec_hi, miou))
    rows = []
    if per_sample:
        arr = np.asarray(per_sample, dtype=np.float64)
        snr_groups = np.round(arr[:, 0]).astype(int)
        for snr in sorted(set(snr_groups.tolist())):
            sel = arr[snr_groups == snr]
            rows.append(_metric_row(str(snr), sel))
        rows.append(_metric_row("all", arr))
    return rows


def _metric_row(label: str, sel: np.ndarray) -> dict:
    return {
        "snr_db": label,
        "accuracy": float(np.mean(sel[:, 1])),
        "mean_iou": float(np.mean(sel[:, 4])),
        "recall05": float(np.mean(sel[:, 2])),
        "recall09": float(np.mean(sel[:, 3])),
        "n_samples": int(sel.shape[0]),
    }


def timing_report(reports, targets=()) -> dict:
    """Convergence and wall-clock summary of one run's epoch reports."""
    out = {
        "avg_epoch_seconds": float(np.mean([r.seconds for r in reports])) if reports else 0.0,
        "total_seconds": float(np.sum([r.seconds for r in reports])) if reports else 0.0,
        "epochs_to_target": {},
    }
    for acc in targets:
        out["epochs_to_target"][str(acc)] = epochs_to_target(reports, acc)
    return out


def epochs_to_target(reports, accuracy: float):
    """First epoch reaching the accuracy, or None when never reached."""
    for r in reports:
        if r.val_acc05 >= accuracy:
            return r.epoch
    return None


# -- delimited outputs ----------------------------------------------------------

EPOCH_COLUMNS = ["epoch", "train_loss", "val_loss", "val_ciou", "val_acc05", "seconds"]
METRIC_COLUMNS = ["snr_db", "accuracy", "mean_iou", "recall05", "recall09", "n_samples"]


def write_epoch_reports(path, reports):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(EPOCH_COLUMNS)
        for r in reports:
            w.writerow([r.epoch, f"{r.train_loss:.10g}", f"{r.val_loss:.10g}",
                        f"{r.val_ciou:.10g}", f"{r.val_acc05:.10g}", f"{r.seconds:.3f}"])


def read_epoch_reports(path) -> list[EpochReport]:
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            out.append(EpochReport(int(row["epoch"]), float(row["train_loss"]),
                                   float(row["val_loss"]), float(row["val_ciou"]),
                                   float(row["val_acc05"]), float(row["seconds"])))
    return out


def write_metric_table(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([r["snr_db"], f"{r['accuracy']:.10g}", f"{r['mean_iou']:.10g}",
                        f"{r['recall05']:.10g}", f"{r['recall09']:.10g}", r["n_samples"]])


def read_metric_table(path) -> list[dict]:
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            out.append({
                "snr_db": row["snr_db"],
                "accuracy": float(row["accuracy"]),
                "mean_iou": float(row["mean_iou"]),
                "recall05": float(row["recall05"]),
                "recall09": float(row["recall09"]),
                "n_samples": int(row["n_samples"]),
            })
    return out
