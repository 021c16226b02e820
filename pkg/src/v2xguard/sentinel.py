"""
Symmetric KL divergence abnormality, threshold calibration and per-frame
normal/abnormal decisions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errdyn import COMMUNICATION, MODALITIES, POSITIONAL
from .errors import DimensionError, FormatError, InsufficientDataError, ParameterError

PROB_FLOOR = 1e-12
DEFAULT_PHI = 3.0


def klda(pi, lam) -> float:
    """D_KL(pi || lam) + D_KL(lam || pi), natural log, entries floored at 1e-12."""
    p = np.asarray(pi, dtype=float)
    q = np.asarray(lam, dtype=float)
    if p.shape != q.shape:
        raise DimensionError(f"support mismatch: {p.shape} vs {q.shape}")
    p = np.maximum(p, PROB_FLOOR)
    q = np.maximum(q, PROB_FLOOR)
    return float(max(np.sum((p - q) * (np.log(p) - np.log(q))), 0.0))


def klda_rows(pi, lam) -> np.ndarray:
    p = np.maximum(np.asarray(pi, dtype=float), PROB_FLOOR)
    q = np.maximum(np.asarray(lam, dtype=float), PROB_FLOOR)
    if p.shape != q.shape:
        raise DimensionError(f"support mismatch: {p.shape} vs {q.shape}")
    return np.maximum(np.sum((p - q) * (np.log(p) - np.log(q)), axis=-1), 0.0)


def calibrate_threshold(training_values, phi: float = DEFAULT_PHI) -> float:
    """Mean plus ``phi`` sample standard deviations (n - 1 denominator)."""
    v = np.asarray(training_values, dtype=float).ravel()
    if v.size < 2:
        raise InsufficientDataError(f"calibration needs at least 2 values, got {v.size}")
    if phi < 0 or not np.isfinite(phi):
        raise ParameterError(f"phi must be a finite non-negative number, got {phi}")
    if not np.all(np.isfinite(v)):
        raise ParameterError("calibration values must be finite")
    return float(v.mean() + phi * v.std(ddof=1))


@dataclass(frozen=True)
class AbnormalitySeries:
    modality: str
    values: np.ndarray
    threshold: float
    attack_truth: np.ndarray | None = None
    frames: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ParameterError("abnormality values must be a finite non-negative 1-D series")
        object.__setattr__(self, "values", v)
        frames = np.arange(len(v)) if self.frames is None else np.asarray(self.frames, dtype=int)
        object.__setattr__(self, "frames", frames)
        if self.attack_truth is not None:
            truth = np.asarray(self.attack_truth, dtype=bool)
            if truth.shape != v.shape:
                raise DimensionError("attack truth and values differ in length")
            object.__setattr__(self, "attack_truth", truth)

    @property
    def decisions(self) -> np.ndarray:
        return self.values > self.threshold

    @property
    def n_alarms(self) -> int:
        return int(self.decisions.sum())

    def with_threshold(self, threshold: float) -> AbnormalitySeries:
        return AbnormalitySeries(self.modality, self.values, threshold, self.attack_truth, self.frames)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame", "upsilon", "threshold", "decision", "truth"])
            for k, (f, v, d) in enumerate(zip(self.frames, self.values, self.decisions)):
                truth = "" if self.attack_truth is None else int(self.attack_truth[k])
                w.writerow([int(f), repr(float(v)), repr(float(self.threshold)), int(d), truth])

    @classmethod
    def from_csv(cls, path, modality: str | None = None) -> AbnormalitySeries:
        frames, values, truth = [], [], []
        threshold = None
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = {"frame", "upsilon", "threshold"} - set(reader.fieldnames or ())
            if missing:
                raise FormatError(f"{path}: missing columns {sorted(missing)}")
            for row in reader:
                try:
                    frames.append(int(row["frame"]))
                    values.append(float(row["upsilon"]))
                    threshold = float(row["threshold"])
                except ValueError as exc:
                    raise FormatError(f"{path}: line {reader.line_num}: {exc}") from exc
                truth.append(row.get("truth", ""))
        has_truth = bool(truth) and all(v not in ("", None) for v in truth)
        return cls(modality or Path(path).stem, np.array(values), threshold if threshold is not None else np.inf,
                   np.array([int(v) for v in truth], dtype=bool) if has_truth else None, np.array(frames))


_MESSAGES = {
    POSITIONAL: ("pi_word_pos", "lambda_word_pos"),
    COMMUNICATION: ("pi_word_comm", "lambda_word_comm"),
}


def abnormality_values(snapshots: Sequence, modality: str) -> np.ndarray:
    if modality not in MODALITIES:
        raise ParameterError(f"unknown modality {modality!r}")
    pi_name, lam_name = _MESSAGES[modality]
    out = np.empty(len(snapshots))
    for k, s in enumerate(snapshots):
        pi, lam = getattr(s, pi_name), getattr(s, lam_name)
        if pi is None or lam is None:
            raise FormatError(f"frame {s.frame}: snapshot lacks {modality} pi/lambda messages")
        out[k] = klda(pi, lam)
    return out


def score_run(snapshots: Sequence, modality: str, threshold: float, attack_truth=None) -> AbnormalitySeries:
    values = abnormality_values(snapshots, modality)
    frames = np.array([s.frame for s in snapshots], dtype=int)
    return AbnormalitySeries(modality, values, threshold, attack_truth, frames)
