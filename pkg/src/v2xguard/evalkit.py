"""ROC curves, AUC and detection summaries for abnormality series."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, ParameterError

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # descending; the first point uses +inf
    auc: float

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))

    def best_tpr_at(self, max_fpr: float) -> float:
        ok = self.fpr <= max_fpr + 1e-12
        return float(self.tpr[ok].max())

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fpr", "tpr", "threshold"])
            for f, t, th in self.points:
                w.writerow([repr(f), repr(t), repr(th)])

    def to_json(self, path) -> None:
        doc = {"auc": self.auc, "points": [{"fpr": f, "tpr": t, "threshold": "inf" if np.isinf(th) else th}
                                          for f, t, th in self.points]}
        Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def roc(values, truth) -> RocCurve:
    """Threshold sweep over the unique values (decide positive when value >= threshold)."""
    v = np.asarray(values, dtype=float)
    y = np.asarray(truth, dtype=bool)
    if v.shape != y.shape or v.ndim != 1:
        raise DimensionError("values and truth must be 1-D and of equal length")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ParameterError("ROC needs both attack and normal frames in the truth labels")
    order = np.argsort(-v, kind="stable")
    v_sorted, y_sorted = v[order], y[order]
    # last index of each tie group
    distinct = np.r_[np.nonzero(np.diff(v_sorted))[0], len(v_sorted) - 1]
    tp = np.cumsum(y_sorted)[distinct]
    fp = (distinct + 1) - tp
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thresholds = np.r_[np.inf, v_sorted[distinct]]
    auc = float(_trapezoid(tpr, fpr))
    return RocCurve(fpr, tpr, thresholds, auc)


def detection_summary(series) -> dict:
    """Rates at the series' own threshold plus mean first-alarm latency per attack window."""
    if series.attack_truth is None:
        raise ParameterError(f"series {series.modality!r} carries no attack truth")
    y = series.attack_truth
    d = series.decisions
    tp = int(np.sum(d & y))
    fp = int(np.sum(d & ~y))
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    latencies = []
    for a, b in windows_from_truth(y):
        hits = np.nonzero(d[a:b])[0]
        if len(hits):
            latencies.append(int(hits[0]))
    return {
        "tpr": tp / n_pos if n_pos else float("nan"),
        "fpr": fp / n_neg if n_neg else float("nan"),
        "precision": tp / (tp + fp) if tp + fp else float("nan"),
        "detection_latency_frames": float(np.mean(latencies)) if latencies else float("nan"),
        "windows_detected": len(latencies),
        "windows": len(windows_from_truth(y)),
    }


def windows_from_truth(truth) -> list[tuple[int, int]]:
    y = np.asarray(truth, dtype=bool).astype(int)
    edges = np.diff(np.r_[0, y, 0])
    return list(zip(np.nonzero(edges == 1)[0].tolist(), np.nonzero(edges == -1)[0].tolist()))
