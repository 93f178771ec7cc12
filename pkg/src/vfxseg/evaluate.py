"""Segmentation quality assessment: IoU, per-dataset means, sorted curves."""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import BinaryMask, DimensionMismatch, IoFailure, VfxsegError, load_mask


class EmptyIntersection(VfxsegError):
    pass


@dataclass
class EvalRecord:
    image_id: str
    iou: float
    dataset: str = ""


@dataclass
class EvalReport:
    dataset: str
    records: list
    mean_iou: float
    missing_pred: list
    missing_gt: list

    @property
    def sorted_curve(self):
        """(rank, iou) pairs with iou ascending."""
        ious = sorted(r.iou for r in self.records)
        return list(enumerate(ious))

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset,
            "mean_iou": self.mean_iou,
            "records": [{"id": r.image_id, "iou": r.iou} for r in self.records],
            "missing_pred": self.missing_pred,
            "missing_gt": self.missing_gt,
        }


def iou(P: BinaryMask, Q: BinaryMask) -> float:
    """|P & Q| / |P | Q|; both empty counts as perfect agreement (1)."""
    P = np.asarray(P, dtype=bool)
    Q = np.asarray(Q, dtype=bool)
    if P.shape != Q.shape:
        raise DimensionMismatch(f"mask shapes differ: {P.shape} vs {Q.shape}")
    union = np.logical_or(P, Q).sum()
    if union == 0:
        return 1.0
    inter = np.logical_and(P, Q).sum()
    return float(inter) / float(union)


def evaluate_dataset(pred_dir, gt_dir, dataset: str = "") -> EvalReport:
    """Per-image IoU for masks with matching filenames in two directories.

    Missing counterparts are reported in the result, never silently
    skipped; raises EmptyIntersection when no filename matches at all.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    preds = {p.name: p for p in sorted(pred_dir.iterdir()) if p.suffix.lower() == ".png"}
    gts = {p.name: p for p in sorted(gt_dir.iterdir()) if p.suffix.lower() == ".png"}
    common = sorted(set(preds) & set(gts))
    if not common:
        raise EmptyIntersection(
            f"no matching mask filenames between {pred_dir} and {gt_dir}"
        )
    name = dataset or gt_dir.name
    records = [
        EvalRecord(image_id=fn, iou=iou(load_mask(preds[fn]), load_mask(gts[fn])), dataset=name)
        for fn in common
    ]
    mean = float(np.mean([r.iou for r in records]))
    return EvalReport(
        dataset=name,
        records=records,
        mean_iou=mean,
        missing_pred=sorted(set(gts) - set(preds)),
        missing_gt=sorted(set(preds) - set(gts)),
    )


def save_report(report: EvalReport, path) -> None:
    try:
        Path(path).write_text(json.dumps(report.to_json(), indent=2) + "\n")
    except OSError as e:
        raise IoFailure(f"{path}: {e}") from e


def emit_curve(report: EvalReport, path, plot: bool = False) -> None:
    """Write the sorted-IoU curve as CSV (rank, iou); optionally a PNG plot."""
    if not report.records:
        raise ValueError("cannot emit a curve for an empty report")
    path = Path(path)
    try:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["rank", "iou"])
            for rank, val in report.sorted_curve:
                writer.writerow([rank, f"{val:.8f}"])
    except OSError as e:
        raise IoFailure(f"{path}: {e}") from e
    if plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        ranks = [r for r, _ in report.sorted_curve]
        vals = [v for _, v in report.sorted_curve]
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.plot(ranks, vals)
        ax.set_xlabel("rank")
        ax.set_ylabel("IoU")
        ax.set_title(report.dataset or "sorted IoU")
        ax.set_ylim(0, 1)
        fig.tight_layout()
        fig.savefig(path.with_suffix(".png"), dpi=120)
        plt.close(fig)


def load_curve(path):
    with open(path, newline="") as f:
        reader = csv.reader(f)
        next(reader)  # header
        return [(int(rank), float(val)) for rank, val in reader]
