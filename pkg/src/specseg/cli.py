"""Command-line entry point.

Subcommands: generate, train, eval, detect, lad, report.  Configuration
files are JSON with strict key validation; every training hyperparameter
defaults to the tuned operating point (batch 64, focal gamma 1 / alpha 3,
learning rate 1e-3 reduced to 1e-4, patience 3).  Machine-readable results
go to stdout, diagnostics to stderr.

Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 data-format error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import errors as E
from .cmodel import ModelConfig, load_checkpoint
from .ctensor import fft_array
from .dataset import Dataset, generate_dataset
from .lad import LadConfig, lad_detect
from .objectives import match_segments
from .pipeline import (METRIC_COLUMNS, TrainConfig, _metric_row, evaluate, fine_tune,
                       predicted_segments, prepare_split, timing_report, train,
                       write_metric_table)
from .report import write_report
from .siggen import GenConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DATA = 4

_CONFIG_ERRORS = (E.ConfigInvalid, E.TauOutOfRange, E.UnsupportedModulation,
                  E.PlacementInfeasible)
_DATA_ERRORS = (E.CorruptRecord, E.VersionMismatch, E.CorruptBlob, E.FormatVersionMismatch,
                E.ModeMismatch, E.SplitMissing, E.DatasetEmpty, E.ShapeMismatch,
                E.NonPowerOfTwoLength, E.LengthNotDivisible)


def _fail(code: int, message: str) -> int:
    print(f"specseg: error: {message}", file=sys.stderr)
    return code


def _load_json_config(path, cls, section: str | None = None):
    """Instantiate a config dataclass from JSON, rejecting unknown keys."""
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    if section is not None:
        raw = raw.get(section, {})
    if not isinstance(raw, dict):
        raise E.ConfigInvalid(f"config section {section!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise E.ConfigInvalid(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    for key in ("stem_spec", "stage_channels", "bandwidths_hz", "modulations",
                "split_fractions"):
        if key in raw and isinstance(raw[key], list):
            raw[key] = tuple(tuple(v) if isinstance(v, list) else v for v in raw[key])
    return cls(**raw)


# -- subcommands -----------------------------------------------------------------

def cmd_generate(args) -> int:
    config = _load_json_config(args.config, GenConfig)
    if args.seed is not None:
        config.seed = args.seed
    manifest = generate_dataset(config, args.out)
    summary = {k: manifest[k] for k in ("count", "input_bins", "sample_rate_hz",
                                        "snr_db_range", "signal_count_range", "seed")}
    summary["splits"] = {s: manifest["splits"][s]["count"] for s in manifest["splits"]}
    summary["out"] = args.out
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    model_config = _load_json_config(args.config, ModelConfig, section="model")
    train_config = _load_json_config(args.config, TrainConfig, section="train")
    if args.seed is not None:
        model_config.seed = args.seed
        train_config.seed = args.seed
    model_config.mode = train_config.mode
    dataset = Dataset(args.data)
    if model_config.input_bins != dataset.input_bins:
        raise E.ConfigInvalid(
            f"model input_bins {model_config.input_bins} != dataset {dataset.input_bins}")
    if args.from_ckpt:
        result = fine_tune(args.from_ckpt, dataset, train_config, out_dir=args.out)
    else:
        result = train(dataset, model_config, train_config, out_dir=args.out)
    best = result.reports[result.best_epoch - 1] if result.reports else None
    print(json.dumps({
        "checkpoint": result.checkpoint_path,
        "epochs_run": len(result.reports),
        "best_epoch": result.best_epoch,
        "best_val_acc05": best.val_acc05 if best else None,
        "best_val_ciou": best.val_ciou if best else None,
        "lr_reduced_at": result.lr_reduced_at,
        "timing": timing_report(result.reports),
    }, sort_keys=True))
    return EXIT_OK


def _emit_table(rows, fmt: str, out_path: str | None):
    if out_path:
        write_metric_table(out_path, rows)
    if fmt == "json":
        print(json.dumps(rows, sort_keys=True))
    else:
        print(",".join(METRIC_COLUMNS))
        for r in rows:
            print(",".join(str(r[c]) for c in METRIC_COLUMNS))


def cmd_eval(args) -> int:
    dataset = Dataset(args.data)
    rows = evaluate(args.ckpt, dataset, split=args.split, tau=args.tau)
    out_path = os.path.join(args.out, "eval_table.csv") if args.out else None
    if out_path:
        os.makedirs(args.out, exist_ok=True)
    _emit_table(rows, args.format, out_path)
    return EXIT_OK


def cmd_detect(args) -> int:
    model, header = load_checkpoint(args.ckpt)
    length = model.config.input_bins
    raw = np.fromfile(args.iq, dtype="<f4")
    if raw.size < 2 * length:
        raise E.CorruptRecord(
            f"IQ file holds {raw.size // 2} samples, model needs {length}")
    samples = raw[:2 * length].view("<c8").astype(np.complex128)
    spec = np.fft.fftshift(fft_array(samples))
    x = spec[None, :] if model.mode == "complex" else np.abs(spec)[None, :]
    pred = model.forward(x.astype(model.dtype), train=False)[0]
    segs = predicted_segments(pred, args.tau)
    bin_width = args.sample_rate / length
    out = {
        "mode": model.mode,
        "input_bins": length,
        "tau": args.tau,
        "sample_rate_hz": args.sample_rate,
        "segments": [{
            "begin_bin": s.begin,
            "end_bin": s.end,
            "begin_hz": (s.begin - length // 2) * bin_width,
            "end_hz": (s.end + 1 - length // 2) * bin_width,
        } for s in segs],
    }
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def cmd_lad(args) -> int:
    dataset = Dataset(args.data)
    cfg = LadConfig(lower_factor=args.lower, upper_factor=args.upper,
                    min_run=args.min_run).validate()
    data = prepare_split(dataset, args.split, "complex", "double")
    per_sample = []
    for i in range(data.inputs.shape[0]):
        power = np.abs(data.inputs[i]) ** 2
        preds = lad_detect(power, cfg)
        truth = data.truth_segments[i]
        acc, rec05, miou = match_segments(preds, truth, 0.5)
        _, rec09, _ = match_segments(preds, truth, 0.9)
        per_sample.append((data.snr_db[i], acc, rec05, rec09, miou))
    rows = []
    if per_sample:
        arr = np.asarray(per_sample)
        groups = np.round(arr[:, 0]).astype(int)
        for snr in sorted(set(groups.tolist())):
            rows.append(_metric_row(str(snr), arr[groups == snr]))
        rows.append(_metric_row("all", arr))
    out_path = os.path.join(args.out, "eval_table.csv") if args.out else None
    if out_path:
        os.makedirs(args.out, exist_ok=True)
    _emit_table(rows, args.format, out_path)
    return EXIT_OK


def cmd_report(args) -> int:
    summary = write_report(args.runs, args.out)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="specseg",
                                description="wideband multi-signal spectrum segmentation")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize a labeled IQ dataset")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=None)
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="train a segmentation model")
    t.add_argument("--data", required=True)
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--from-ckpt", default=None, help="fine-tune from this checkpoint")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="per-SNR metrics of a checkpoint on a split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--tau", type=float, default=0.5)
    e.add_argument("--out", default=None)
    e.add_argument("--format", choices=("csv", "json"), default="csv")
    e.set_defaults(fn=cmd_eval)

    d = sub.add_parser("detect", help="segment one raw IQ capture")
    d.add_argument("--ckpt", required=True)
    d.add_argument("--iq", required=True, help="little-endian interleaved float32 I/Q")
    d.add_argument("--sample-rate", type=float, default=20e6)
    d.add_argument("--tau", type=float, default=0.5)
    d.set_defaults(fn=cmd_detect)

    l = sub.add_parser("lad", help="energy-detection baseline on a split")
    l.add_argument("--data", required=True)
    l.add_argument("--split", default="test")
    l.add_argument("--lower", type=float, default=LadConfig.lower_factor)
    l.add_argument("--upper", type=float, default=LadConfig.upper_factor)
    l.add_argument("--min-run", type=int, default=LadConfig.min_run)
    l.add_argument("--out", default=None)
    l.add_argument("--format", choices=("csv", "json"), default="csv")
    l.set_defaults(fn=cmd_lad)

    r = sub.add_parser("report", help="aggregate runs into tables and figures")
    r.add_argument("--runs", nargs="+", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _CONFIG_ERRORS as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except json.JSONDecodeError as exc:
        return _fail(EXIT_CONFIG, f"invalid JSON config: {exc}")
    except _DATA_ERRORS as exc:
        return _fail(EXIT_DATA, str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, str(exc))


if __name__ == "__main__":
    sys.exit(main())
