"""Evaluation: count-error confusion tables, ROC/AUC, k-fold splits and incident detection lag."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

CROWD_BINS = ((0, 10), (11, 25), (26, 50), (51, 75))
ERROR_BINS = ((0, 5), (6, 10), (11, 15), (16, 20), (21, None))
GRACE_S = 1.0


class AlignmentError(ValueError):
    pass


def _bin_label(b) -> str:
    lo, hi = b
    return f">{lo - 1}" if hi is None else f"[{lo},{hi}]"


def crowd_bin(count: int) -> int | None:
    for k, (lo, hi) in enumerate(CROWD_BINS):
        if lo <= count <= hi:
            return k
    return None


def error_bin(err: int) -> int:
    for k, (lo, hi) in enumerate(ERROR_BINS):
        if hi is None or err <= hi:
            return k
    raise AssertionError("unreachable")


@dataclass(frozen=True)
class ErrorConfusion:
    """cells[e, c]: percentage of frames in crowd bin c with error bin e."""

    cells: np.ndarray
    frames: np.ndarray  # per crowd bin

    def column(self, crowd: int) -> np.ndarray:
        return self.cells[:, crowd]

    def to_json(self) -> dict:
        return {"crowd_bins": [_bin_label(b) for b in CROWD_BINS],
                "error_bins": [_bin_label(b) for b in ERROR_BINS],
                "cells": np.round(self.cells, 4).tolist(), "frames": self.frames.tolist()}

    def format_table(self, decimals: int = 0) -> str:
        return format_confusion(self.cells, decimals)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["error_bin"] + [_bin_label(b) for b in CROWD_BINS])
            for e, b in enumerate(ERROR_BINS):
                w.writerow([_bin_label(b)] + [f"{v:.4f}" for v in self.cells[e]])


def _align(estimates, truth) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(estimates, Mapping) or isinstance(truth, Mapping):
        if not (isinstance(estimates, Mapping) and isinstance(truth, Mapping)):
            raise AlignmentError("both inputs must be keyed by frame index")
        missing = set(truth) ^ set(estimates)
        if missing:
            raise AlignmentError(f"{len(missing)} frames present on one side only, e.g. {min(missing)}")
        keys = sorted(truth)
        return (np.array([estimates[k] for k in keys], dtype=np.float64),
                np.array([truth[k] for k in keys], dtype=np.int64))
    est = np.asarray(estimates, dtype=np.float64)
    tru = np.asarray(truth, dtype=np.int64)
    if est.shape != tru.shape:
        raise AlignmentError(f"{len(est)} estimates for {len(tru)} truth frames")
    return est, tru


def error_confusion(estimates, truth) -> ErrorConfusion:
    """Frames are binned by true count; error is |round(estimate) - truth|.

    Rounding is half-to-even. Frames with a true count above 75 are ignored.
    """
    est, tru = _align(estimates, truth)
    err = np.abs(np.rint(est).astype(np.int64) - tru)
    counts = np.zeros((len(ERROR_BINS), len(CROWD_BINS)))
    for e, t in zip(err, tru):
        c = crowd_bin(int(t))
        if c is not None:
            counts[error_bin(int(e)), c] += 1
    frames = counts.sum(axis=0)
    cells = np.where(frames > 0, 100.0 * counts / np.where(frames > 0, frames, 1), 0.0)
    return ErrorConfusion(cells, frames.astype(np.int64))


def format_confusion(cells, decimals: int = 0) -> str:
    """Aligned text table: error bins down, crowd bins across. The open-ended
    last error row is only printed when it has a non-zero entry."""
    cells = np.asarray(cells, dtype=np.float64)
    head = ["Abs. error"] + [_bin_label(b) for b in CROWD_BINS]
    rows = []
    for e, b in enumerate(ERROR_BINS):
        if b[1] is None and not np.any(np.round(cells[e], decimals) != 0):
            continue
        rows.append([_bin_label(b)] + [f"{v:.{decimals}f}" for v in cells[e]])
    widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
    lines = ["  ".join(s.rjust(w) for s, w in zip(r, widths)) for r in [head] + rows]
    return "\n".join(lines)


def mae(estimates, truth) -> float:
    est, tru = _align(estimates, truth)
    return float(np.mean(np.abs(est - tru)))


# ---------------------------------------------------------------------------
# ROC


@dataclass(frozen=True)
class RocResult:
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float
    folds: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"auc": self.auc, "thresholds": self.thresholds.tolist(),
                "tpr": self.tpr.tolist(), "fpr": self.fpr.tolist(), "folds": self.folds}


def roc_auc(scores, labels) -> RocResult:
    """ROC over every distinct score (descending) and trapezoidal AUC.

    Tied scores move TPR and FPR together, which makes the area equal the
    Mann-Whitney statistic with ties counted one half.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels) > 0
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both positive and negative labels")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    # integrate with integer counts: exact up to one final division
    area2 = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1]))) + int(fp[0] * tp[0])
    auc = area2 / (2.0 * n_pos * n_neg)
    return RocResult(np.r_[np.inf, s[last]], tpr, fpr, auc)


def pairwise_auc(scores, labels) -> float:
    """O(n^2) concordant-pair count."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels) > 0
    pos, neg = s[y], s[~y]
    gt = (pos[:, None] > neg[None, :]).sum()
    eq = (pos[:, None] == neg[None, :]).sum()
    return float((gt + 0.5 * eq) / (len(pos) * len(neg)))


# ---------------------------------------------------------------------------
# splits


def kfold(items: Sequence, k: int = 5, seed: int = 0) -> list[list]:
    n = len(items)
    if k < 1 or k > n:
        raise ValueError(f"cannot split {n} items into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [[items[i] for i in part] for part in np.array_split(perm, k)]


def train_test_split(items: Sequence, test_fraction: float = 0.1, seed: int = 0) -> tuple[list, list]:
    n = len(items)
    n_test = max(1, int(round(test_fraction * n))) if n > 1 else 0
    perm = np.random.default_rng(seed).permutation(n)
    test = sorted(perm[:n_test].tolist())
    train = sorted(perm[n_test:].tolist())
    return [items[i] for i in train], [items[i] for i in test]


def cross_validated_auc(scores, labels, k: int = 5, seed: int = 0) -> RocResult:
    """Pooled ROC plus one AUC per fold (folds with a single class report None)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    res = roc_auc(s, y)
    folds = []
    for f, idx in enumerate(kfold(list(range(len(s))), k, seed)):
        ys = y[idx]
        auc = roc_auc(s[idx], ys).auc if np.any(ys > 0) and np.any(ys <= 0) else None
        folds.append({"fold": f, "n": len(idx), "auc": auc})
    return RocResult(res.thresholds, res.tpr, res.fpr, res.auc, folds)


# ---------------------------------------------------------------------------
# detection lag


@dataclass(frozen=True)
class LagResult:
    lag_s: float | None
    false_alarms: int  # alert episodes starting before the grace window

    @property
    def missed(self) -> bool:
        return self.lag_s is None


def detection_lag(alert_frames: Sequence[int], onset: int, fps: float = 25.0, grace_s: float = GRACE_S) -> LagResult:
    """Seconds from onset to the first alerting frame at or after onset - grace.

    ``alert_frames`` lists every frame in alert state; runs of consecutive
    frames form one episode for the false-alarm count.
    """
    start = onset - fps * grace_s
    frames = sorted(set(int(f) for f in alert_frames))
    early = sum(1 for i, f in enumerate(frames) if f < start and (i == 0 or frames[i - 1] != f - 1))
    hits = [f for f in frames if f >= start]
    if not hits:
        return LagResult(None, early)
    return LagResult((hits[0] - onset) / fps, early)


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
