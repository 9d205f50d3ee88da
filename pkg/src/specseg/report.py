"""Cross-run reporting: combined tables, convergence comparison, figures.

A "run directory" is what `train` writes: epoch_report.csv plus meta.json,
optionally joined by an eval_table.csv produced by `eval` or `lad`.  The
report aggregates any number of runs into delimited tables and renders the
matching figures (accuracy/IoU/recall vs SNR, validation-accuracy
convergence, epoch duration) as PNG files next to them.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .errors import SplitMissing
from .pipeline import (epochs_to_target, read_epoch_reports, read_metric_table,
                       timing_report)

SUMMARY_COLUMNS = ["run", "mode", "seed", "epochs_run", "best_val_acc05",
                   "epochs_to_own_best", "epochs_to_real_best", "avg_epoch_seconds",
                   "total_seconds"]


def load_run(run_dir: str) -> dict:
    """Read one run directory: training outputs, eval-only tables, or both."""
    meta_path = os.path.join(run_dir, "meta.json")
    report_path = os.path.join(run_dir, "epoch_report.csv")
    eval_path = os.path.join(run_dir, "eval_table.csv")
    if not any(os.path.exists(p) for p in (meta_path, report_path, eval_path)):
        raise SplitMissing(f"{run_dir} holds no run outputs "
                           "(meta.json, epoch_report.csv, or eval_table.csv)")
    meta = {}
    if os.path.exists(meta_path):
        with open(meta_path, encoding="utf-8") as f:
            meta = json.load(f)
    reports = read_epoch_reports(report_path) if os.path.exists(report_path) else []
    eval_rows = read_metric_table(eval_path) if os.path.exists(eval_path) else None
    return {
        "name": os.path.basename(os.path.normpath(run_dir)),
        "dir": run_dir,
        "meta": meta,
        "reports": reports,
        "eval_rows": eval_rows,
    }


def build_comparison(runs: list[dict]) -> list[dict]:
    """Epochs-to-target table: how fast each run reaches the best real-mode
    validation accuracy (the convergence comparison between the complex
    model and its real-valued counterpart)."""
    real_best = [max((r.val_acc05 for r in run["reports"]), default=0.0)
                 for run in runs if run["meta"].get("mode") == "real"]
    real_target = max(real_best) if real_best else None
    rows = []
    for run in runs:
        reports = run["reports"]
        best_acc = max((r.val_acc05 for r in reports), default=0.0)
        timing = timing_report(reports)
        rows.append({
            "run": run["name"],
            "mode": run["meta"].get("mode", "?"),
            "seed": run["meta"].get("seed", ""),
            "epochs_run": len(reports),
            "best_val_acc05": best_acc,
            "epochs_to_own_best": epochs_to_target(reports, best_acc),
            "epochs_to_real_best": (epochs_to_target(reports, real_target)
                                    if real_target is not None else None),
            "avg_epoch_seconds": timing["avg_epoch_seconds"],
            "total_seconds": timing["total_seconds"],
        })
    return rows


def write_report(run_dirs: list[str], out_dir: str) -> dict:
    """Aggregate runs into CSV tables and figures under `out_dir`."""
    runs = [load_run(d) for d in run_dirs]
    os.makedirs(out_dir, exist_ok=True)
    comparison = build_comparison(runs)

    with open(os.path.join(out_dir, "runs_summary.csv"), "w", newline="",
              encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        for row in comparison:
            w.writerow(row)

    snr_rows = []
    for run in runs:
        for row in run["eval_rows"] or []:
            snr_rows.append({"run": run["name"], "mode": run["meta"].get("mode", "?"), **row})
    if snr_rows:
        with open(os.path.join(out_dir, "metrics_by_snr.csv"), "w", newline="",
                  encoding="utf-8") as f:
            w = csv.DictWriter(f, fieldnames=["run", "mode", "snr_db", "accuracy",
                                              "mean_iou", "recall05", "recall09", "n_samples"])
            w.writeheader()
            for row in snr_rows:
                w.writerow(row)

    figures = render_figures(runs, out_dir)
    summary = {
        "runs": comparison,
        "real_target_val_acc05": max((r["best_val_acc05"] for r in comparison
                                      if r["mode"] == "real"), default=None),
        "tables": ["runs_summary.csv"] + (["metrics_by_snr.csv"] if snr_rows else []),
        "figures": figures,
    }
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as f:
        json.dump(summary, f, sort_keys=True, indent=2)
        f.write("\n")
    return summary


# -- figures ---------------------------------------------------------------------

_METRIC_FIGS = (
    ("accuracy", "accuracy_vs_snr.png", "Segmentation accuracy @ IoU 0.5"),
    ("mean_iou", "iou_vs_snr.png", "Mean IoU score"),
    ("recall05", "recall05_vs_snr.png", "Recall @ IoU 0.5"),
    ("recall09", "recall09_vs_snr.png", "Recall @ IoU 0.9"),
)


def render_figures(runs: list[dict], out_dir: str) -> list[str]:
    written = []
    with_eval = [r for r in runs if r["eval_rows"]]
    for key, fname, title in _METRIC_FIGS:
        if not with_eval:
            break
        fig, ax = plt.subplots(figsize=(6, 4))
        for run in with_eval:
            rows = [r for r in run["eval_rows"] if r["snr_db"] != "all"]
            if not rows:
                continue
            snr = [float(r["snr_db"]) for r in rows]
            ax.plot(snr, [r[key] for r in rows], marker="o", label=run["name"])
        ax.set_xlabel("sample SNR (dB)")
        ax.set_ylabel(title)
        ax.set_ylim(-0.02, 1.02)
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = os.path.join(out_dir, fname)
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(fname)

    if runs:
        fig, ax = plt.subplots(figsize=(6, 4))
        for run in runs:
            eps = [r.epoch for r in run["reports"]]
            accs = [r.val_acc05 for r in run["reports"]]
            if eps:
                ax.plot(eps, accs, marker="o", label=run["name"])
        ax.set_xlabel("epoch")
        ax.set_ylabel("validation accuracy @ IoU 0.5")
        ax.set_ylim(-0.02, 1.02)
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = os.path.join(out_dir, "convergence.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append("convergence.png")

        fig, ax = plt.subplots(figsize=(6, 4))
        names = [r["name"] for r in runs]
        secs = [timing_report(r["reports"])["avg_epoch_seconds"] for r in runs]
        ax.bar(range(len(names)), secs)
        ax.set_xticks(range(len(names)), names, rotation=30, ha="right", fontsize=8)
        ax.set_ylabel("seconds per epoch")
        ax.grid(True, axis="y", alpha=0.3)
        fig.tight_layout()
        path = os.path.join(out_dir, "epoch_seconds.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append("epoch_seconds.png")
    return written
