"""Evaluation protocol: per-slice Dice loss records, detection-probability
analysis, hallucination statistics and run-vs-run comparison artifacts."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .data.manifest import Manifest
from .data.normalize import NormStats
from .errors import ComparisonError, UsageError
from .inference import infer_volume
from .model.net import GatedSegNet

# published reference result this harness reproduces directionally, not numerically
REFERENCE_SUMMARY = {
    "gated_dice_loss": "0.013 +/- 0.036",
    "non_gated_dice_loss": "0.732 +/- 0.314",
    "status": "reported reference, not reproduced at desk scale",
}

RECORD_COLUMNS = ("run_id", "subject_id", "slice_index", "class", "presence_gt",
                  "det_prob", "dice_loss", "predicted_any", "hallucinated")


@dataclass
class SliceMetricsRecord:
    subject_id: str
    slice_index: int
    class_id: int
    class_name: str
    dice_loss: float
    presence_gt: bool
    det_prob: float
    predicted_any: bool
    hallucinated: bool

    def __post_init__(self):
        if self.hallucinated and self.presence_gt:
            raise ValueError("hallucinated implies the structure is absent")
        if not 0.0 <= self.dice_loss <= 1.0:
            raise ValueError(f"dice_loss {self.dice_loss} outside [0, 1]")


@dataclass
class RunReport:
    run_id: str
    gating_mode: str
    class_names: list[str]
    records: list[SliceMetricsRecord]
    summary: dict = field(default_factory=dict)


def _hard_dice_loss(pred: np.ndarray, gt: np.ndarray, smooth: float = 1e-6) -> float:
    tp = float(np.logical_and(pred, gt).sum())
    fp = float(np.logical_and(pred, ~gt).sum())
    fn = float(np.logical_and(~pred, gt).sum())
    return 1.0 - (2 * tp + smooth) / (2 * tp + fp + fn + smooth)


def detection_auc_values(det_probs: np.ndarray, presence: np.ndarray) -> list[float | None]:
    """Per-class rank-based ROC AUC with tie averaging; None when a class has
    a single label value (degenerate)."""
    from scipy.stats import rankdata

    out = []
    for c in range(det_probs.shape[1]):
        y = presence[:, c].astype(bool)
        npos, nneg = int(y.sum()), int((~y).sum())
        if npos == 0 or nneg == 0:
            out.append(None)
            continue
        ranks = rankdata(det_probs[:, c])
        auc = (ranks[y].sum() - npos * (npos + 1) / 2) / (npos * nneg)
        out.append(float(auc))
    return out


def hallucination_rate(records: list[SliceMetricsRecord], num_classes: int
                       ) -> list[float | None]:
    """Per class: hallucinated count over anatomy-absent count; None when a
    class is never absent (no defined denominator)."""
    rates = []
    for c in range(num_classes):
        absent = [r for r in records if r.class_id == c and not r.presence_gt]
        if not absent:
            rates.append(None)
            continue
        rates.append(sum(r.hallucinated for r in absent) / len(absent))
    return rates


def detection_auc(records: list[SliceMetricsRecord], num_classes: int) -> list[float | None]:
    det = np.array([[r.det_prob for r in records if r.class_id == c]
                    for c in range(num_classes)]).T
    pres = np.array([[r.presence_gt for r in records if r.class_id == c]
                     for c in range(num_classes)]).T
    if det.size == 0:
        return [None] * num_classes
    return detection_auc_values(det, pres)


def summarize(records: list[SliceMetricsRecord], class_names: list[str]) -> dict:
    num_classes = len(class_names)
    rates = hallucination_rate(records, num_classes)
    aucs = detection_auc(records, num_classes)
    per_class = {}
    for c, name in enumerate(class_names):
        vals = np.array([r.dice_loss for r in records if r.class_id == c])
        absent_vals = np.array([r.dice_loss for r in records
                                if r.class_id == c and not r.presence_gt])
        per_class[name] = {
            "dice_loss_mean": float(vals.mean()) if vals.size else None,
            "dice_loss_std": float(vals.std()) if vals.size else None,
            "dice_loss_absent_mean": float(absent_vals.mean()) if absent_vals.size else None,
            "hallucination_rate": rates[c],
            "detection_auc": aucs[c],
        }
    all_vals = np.array([r.dice_loss for r in records])
    return {
        "num_records": len(records),
        "dice_loss_mean": float(all_vals.mean()) if all_vals.size else None,
        "dice_loss_std": float(all_vals.std()) if all_vals.size else None,
        "per_class": per_class,
    }


def evaluate(model: GatedSegNet, stats: NormStats, manifest: Manifest, split: str,
             gating_mode: str, run_id: str = "run") -> RunReport:
    """Autoregressive inference over every subject of the split; one record
    per (subject, slice, class). Binarization threshold 0.5."""
    subjects = manifest.split_subjects(split)
    if not subjects:
        raise UsageError(f"split {split!r} is empty")
    records: list[SliceMetricsRecord] = []
    class_names: list[str] = []
    for subject_id in sorted(subjects):
        volume = manifest.load_volume(subject_id)
        class_names = volume.class_names or [
            f"class{c}" for c in range(volume.num_classes)
        ]
        _, hard, det = infer_volume(model, volume, stats, gating_mode)
        for z in range(volume.num_slices):
            for c in range(volume.num_classes):
                gt = volume.masks[c, z].astype(bool)
                pred = hard[c, z].astype(bool)
                presence = bool(gt.any())
                predicted_any = bool(pred.any())
                records.append(SliceMetricsRecord(
                    subject_id=subject_id,
                    slice_index=z,
                    class_id=c,
                    class_name=class_names[c],
                    dice_loss=_hard_dice_loss(pred, gt),
                    presence_gt=presence,
                    det_prob=float(det[z, c]) if c < det.shape[1] else float("nan"),
                    predicted_any=predicted_any,
                    hallucinated=predicted_any and not presence,
                ))
    records.sort(key=lambda r: (r.subject_id, r.slice_index, r.class_id))
    report = RunReport(run_id=run_id, gating_mode=gating_mode, class_names=class_names,
                       records=records)
    report.summary = summarize(records, class_names)
    return report


def write_report(report: RunReport, out_dir: str | Path):
    """records CSV + summary JSON + a per-slice Dice loss curve figure."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"{report.run_id}_records.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(RECORD_COLUMNS)
        for r in report.records:
            writer.writerow([report.run_id, r.subject_id, r.slice_index, r.class_name,
                             int(r.presence_gt), f"{r.det_prob:.8g}",
                             f"{r.dice_loss:.8g}", int(r.predicted_any),
                             int(r.hallucinated)])
    payload = {"run_id": report.run_id, "gating_mode": report.gating_mode,
               "summary": report.summary}
    (out_dir / f"{report.run_id}_summary.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _plot_dice_curves({report.run_id: report}, out_dir / f"{report.run_id}_dice_curve.png")


def read_report_csv(path: str | Path) -> RunReport:
    path = Path(path)
    records = []
    run_id = path.stem.replace("_records", "")
    class_names: list[str] = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            if row["class"] not in class_names:
                class_names.append(row["class"])
            run_id = row["run_id"]
            records.append(SliceMetricsRecord(
                subject_id=row["subject_id"],
                slice_index=int(row["slice_index"]),
                class_id=class_names.index(row["class"]),
                class_name=row["class"],
                dice_loss=float(row["dice_loss"]),
                presence_gt=bool(int(row["presence_gt"])),
                det_prob=float(row["det_prob"]),
                predicted_any=bool(int(row["predicted_any"])),
                hallucinated=bool(int(row["hallucinated"])),
            ))
    report = RunReport(run_id=run_id, gating_mode="?", class_names=class_names,
                       records=records)
    report.summary = summarize(records, class_names)
    return report


def _plot_dice_curves(reports: dict[str, RunReport], path: Path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(9, 4))
    for label, report in reports.items():
        per_slice: dict[tuple, list[float]] = {}
        for r in report.records:
            per_slice.setdefault((r.subject_id, r.slice_index), []).append(r.dice_loss)
        keys = sorted(per_slice)
        ax.plot(range(len(keys)), [np.mean(per_slice[k]) for k in keys], label=label)
    ax.set_xlabel("slice (ordered by subject, z)")
    ax.set_ylabel("Dice loss")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def compare(report_a: RunReport, report_b: RunReport, out_dir: str | Path) -> dict:
    """Side-by-side per-slice CSV, a two-series Dice curve figure and a delta
    summary; both runs must cover the same (subject, slice, class) set."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    key = lambda r: (r.subject_id, r.slice_index, r.class_name)
    map_a = {key(r): r for r in report_a.records}
    map_b = {key(r): r for r in report_b.records}
    if set(map_a) != set(map_b):
        missing = sorted(set(map_a) ^ set(map_b))[:10]
        raise ComparisonError(f"slice sets differ between runs; first mismatches: {missing}")

    csv_path = out_dir / "comparison.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"# reference: gated {REFERENCE_SUMMARY['gated_dice_loss']} vs "
                         f"non-gated {REFERENCE_SUMMARY['non_gated_dice_loss']} "
                         f"({REFERENCE_SUMMARY['status']})"])
        writer.writerow(["subject_id", "slice_index", "class",
                         f"dice_loss_{report_a.run_id}", f"dice_loss_{report_b.run_id}",
                         "delta"])
        deltas = []
        for k in sorted(map_a):
            da, db = map_a[k].dice_loss, map_b[k].dice_loss
            deltas.append(da - db)
            writer.writerow([k[0], k[1], k[2], f"{da:.8g}", f"{db:.8g}", f"{da - db:.8g}"])

    _plot_dice_curves({report_a.run_id: report_a, report_b.run_id: report_b},
                      out_dir / "dice_curve_comparison.png")
    result = {
        "run_a": report_a.run_id,
        "run_b": report_b.run_id,
        "mean_delta": float(np.mean(deltas)),
        "summary_a": report_a.summary,
        "summary_b": report_b.summary,
        "reference": REFERENCE_SUMMARY,
    }
    (out_dir / "comparison_summary.json").write_text(
        json.dumps(result, indent=2, sort_keys=True) + "\n")
    return result
