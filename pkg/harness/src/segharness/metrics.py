"""Segmentation metrics and the task report.

Scores are per-class precision/recall/F1/IoU from pixel confusion counts,
averaged over the defect classes only: the background class would dominate
every mean and hide the defect performance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

CLASS_NAMES = ("background", "dent", "scratch")
N_CLASSES = len(CLASS_NAMES)
REPORT_ROWS = ("Sy->Sy", "Sy->Re", "Sy+ft->Re", "Re->Re")


def confusion_matrix(prediction: np.ndarray, target: np.ndarray,
                     n_classes: int = N_CLASSES) -> np.ndarray:
    """Pixel confusion counts, rows = target class, cols = predicted class."""
    p = np.asarray(prediction).ravel().astype(np.int64)
    t = np.asarray(target).ravel().astype(np.int64)
    if p.shape != t.shape:
        raise ValueError("prediction and target sizes differ")
    if p.min() < 0 or p.max() >= n_classes or t.min() < 0 or t.max() >= n_classes:
        raise ValueError("class ids outside the configured range")
    return np.bincount(t * n_classes + p,
                       minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def scores_from_confusion(conf: np.ndarray, ignore_background: bool = True) -> dict:
    """mP/mR/mF1/mIoU in [0, 100], plus the per-class breakdown."""
    n = conf.shape[0]
    per_class = {}
    for c in range(n):
        tp = float(conf[c, c])
        fp = float(conf[:, c].sum() - tp)
        fn = float(conf[c, :].sum() - tp)
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        iou = tp / (tp + fp + fn) if tp + fp + fn > 0 else 0.0
        per_class[CLASS_NAMES[c] if c < len(CLASS_NAMES) else str(c)] = {
            "precision": precision, "recall": recall, "f1": f1, "iou": iou}
    counted = [v for k, v in per_class.items()
               if not (ignore_background and k == "background")]
    return {
        "mP": 100.0 * float(np.mean([v["precision"] for v in counted])),
        "mR": 100.0 * float(np.mean([v["recall"] for v in counted])),
        "mF1": 100.0 * float(np.mean([v["f1"] for v in counted])),
        "mIoU": 100.0 * float(np.mean([v["iou"] for v in counted])),
        "per_class": per_class,
    }


@dataclass
class TaskReport:
    """Per-texture and overall scores for the train->test domain matrix."""

    rows: dict = field(default_factory=dict)  # texture -> domain -> scores

    def add(self, texture: str, domains: str, scores: dict):
        if domains not in REPORT_ROWS:
            raise ValueError(f"unknown experiment row {domains!r}")
        for key in ("mP", "mR", "mF1", "mIoU"):
            if not (0.0 <= scores[key] <= 100.0):
                raise ValueError(f"{key}={scores[key]} outside [0, 100]")
        self.rows.setdefault(texture, {})[domains] = {
            k: scores[k] for k in ("mP", "mR", "mF1", "mIoU")}

    def to_json(self) -> str:
        return json.dumps(self.rows, indent=2, sort_keys=True)

    def to_table(self) -> str:
        lines = [f"{'Texture':<14}{'Domains':<12}{'mP':>7}{'mR':>7}{'mF1':>7}{'mIoU':>7}"]
        for texture in sorted(self.rows):
            for domains in REPORT_ROWS:
                if domains not in self.rows[texture]:
                    continue
                s = self.rows[texture][domains]
                lines.append(f"{texture:<14}{domains:<12}"
                             f"{s['mP']:>7.1f}{s['mR']:>7.1f}"
                             f"{s['mF1']:>7.1f}{s['mIoU']:>7.1f}")
        return "\n".join(lines)
