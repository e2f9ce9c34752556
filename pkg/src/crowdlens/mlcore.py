"""Linear SVM, Platt calibration, score-level fusion and the incident alert stream."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

from .core import FormatError

SVM_VERSION = 1
ALERT_THRESHOLD = 0.4
NON_INCIDENT_CEILING = 0.2


class TrainingError(ValueError):
    pass


class CalibrationError(ValueError):
    pass


@dataclass
class LinearSvmModel:
    weights: np.ndarray
    bias: float = 0.0
    A: float = -1.0
    B: float = 0.0
    history: list = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not (np.all(np.isfinite(self.weights)) and math.isfinite(self.bias)):
            raise TrainingError("non-finite SVM coefficients")

    @property
    def feature_dim(self) -> int:
        return len(self.weights)

    def margin(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.feature_dim:
            raise ValueError(f"feature length {X.shape[1]} != model dimension {self.feature_dim}")
        return X @ self.weights + self.bias

    def probability(self, margin) -> np.ndarray:
        return platt_probability(margin, self.A, self.B)

    def predict(self, X) -> np.ndarray:
        return np.where(self.margin(X) >= 0, 1, -1)

    def to_json(self) -> dict:
        return {"version": SVM_VERSION, "feature_dim": self.feature_dim,
                "weights": [float(v) for v in self.weights], "bias": float(self.bias),
                "A": float(self.A), "B": float(self.B)}

    @classmethod
    def from_json(cls, d: dict) -> "LinearSvmModel":
        if d.get("version") != SVM_VERSION:
            raise FormatError("unsupported SVM model version")
        w = np.asarray(d["weights"], dtype=np.float64)
        if len(w) != int(d["feature_dim"]):
            raise FormatError("SVM weight count does not match feature_dim")
        return cls(w, float(d["bias"]), float(d["A"]), float(d["B"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "LinearSvmModel":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: malformed SVM model") from exc


@numba.njit(cache=True)
def _pegasos_epoch(Z, y, order, w, w_avg, t, n_avg, lam, radius):
    d = Z.shape[1]
    for i in order:
        t += 1
        eta = 1.0 / (lam * t)
        m = 0.0
        for k in range(d):
            m += w[k] * Z[i, k]
        shrink = 1.0 - eta * lam
        for k in range(d):
            w[k] *= shrink
        if y[i] * m < 1.0:
            for k in range(d):
                w[k] += eta * y[i] * Z[i, k]
        nrm = 0.0
        for k in range(d):
            nrm += w[k] * w[k]
        nrm = math.sqrt(nrm)
        if nrm > radius:
            for k in range(d):
                w[k] *= radius / nrm
        n_avg += 1
        for k in range(d):
            w_avg[k] += (w[k] - w_avg[k]) / n_avg
    return t, n_avg


def svm_objective(w: np.ndarray, Z: np.ndarray, y: np.ndarray, lam: float) -> float:
    return 0.5 * lam * float(w @ w) + float(np.mean(np.maximum(0.0, 1.0 - y * (Z @ w))))


def train_svm(
    X,
    y,
    C: float = 1.0,
    epochs: int = 300,
    seed: int = 0,
    fit_bias: bool = True,
    standardize: bool = True,
) -> LinearSvmModel:
    """L2-regularised hinge loss by averaged stochastic subgradient steps.

    Minimises ``0.5 |w|^2 + C * sum(hinge)`` over standardised features (the
    scaling is folded back into the returned weights); the bias is a
    regularised constant feature. Epoch ``e`` visits rows in a permutation
    drawn from ``seed``. Step sizes are ``1 / (lam * (t + t0))`` with ``t0``
    making the first step unit-sized, and the iterate average restarts at
    epochs 1, 2, 4, 8, ... (suffix averaging). The returned weights are the
    epoch average with the lowest objective; ``history`` holds the best
    objective so far after each epoch. With ``fit_bias`` and ``standardize``
    both off the decision function is exactly linear (no offset).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if len(X) != len(y):
        raise TrainingError("rows and labels differ in length")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise TrainingError("labels must be +1/-1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise TrainingError("training needs both classes")
    n, d = X.shape
    if standardize:
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd = np.where(sd > 1e-12, sd, 1.0)
    else:
        mu, sd = np.zeros(X.shape[1]), np.ones(X.shape[1])
    Z = (X - mu) / sd
    if fit_bias:
        Z = np.hstack([Z, np.ones((n, 1))])
    Z = np.ascontiguousarray(Z)
    lam = 1.0 / (C * n)
    radius = 1.0 / math.sqrt(lam)
    sq = float(np.max(np.einsum("ij,ij->i", Z, Z)))
    # eta_0 * |z|^2 = 1 for the largest row
    t = max(1, int(max(sq, 1e-12) / lam))
    rng = np.random.default_rng(seed)
    w = np.zeros(Z.shape[1])
    w_avg = np.zeros(Z.shape[1])
    n_avg = 0
    best_obj, best_w = math.inf, w_avg.copy()
    history = []
    restart = 1
    for epoch in range(epochs):
        if epoch == restart:
            w_avg[:] = w
            n_avg = 1
            restart *= 2
        order = rng.permutation(n).astype(np.int64)
        t, n_avg = _pegasos_epoch(Z, y, order, w, w_avg, t, n_avg, lam, radius)
        obj = svm_objective(w_avg, Z, y, lam)
        if obj < best_obj:
            best_obj, best_w = obj, w_avg.copy()
        history.append(best_obj * C * n)
    wf = best_w[:d] / sd
    b = (best_w[d] if fit_bias else 0.0) - float(wf @ mu)
    return LinearSvmModel(wf, b, history=history)


# ---------------------------------------------------------------------------
# Platt calibration


def platt_probability(margin, A: float, B: float) -> np.ndarray:
    f = A * np.asarray(margin, dtype=np.float64) + B
    out = np.empty_like(f)
    pos = f >= 0
    e = np.exp(-np.abs(f))
    out[pos] = e[pos] / (1.0 + e[pos])
    out[~pos] = 1.0 / (1.0 + e[~pos])
    return np.clip(out, 1e-12, 1 - 1e-12)


def fit_platt(margins, labels, max_iter: int = 100) -> tuple[float, float]:
    """Sigmoid P(y=1|m) = 1 / (1 + exp(A m + B)) fitted by damped Newton steps
    on regularised targets."""
    m = np.asarray(margins, dtype=np.float64)
    lab = np.asarray(labels)
    n_pos = int(np.sum(lab > 0))
    n_neg = int(np.sum(lab <= 0))
    if n_pos < 10 or n_neg < 10:
        raise CalibrationError("calibration needs at least 10 samples per class")
    if np.ptp(m) == 0:
        raise CalibrationError("all margins are equal")
    hi = (n_pos + 1.0) / (n_pos + 2.0)
    lo = 1.0 / (n_neg + 2.0)
    t = np.where(lab > 0, hi, lo)
    A, B = 0.0, math.log((n_neg + 1.0) / (n_pos + 1.0))

    def objective(A, B):
        f = m * A + B
        return float(np.sum(t * f + np.logaddexp(0.0, -f)))

    fval = objective(A, B)
    for _ in range(max_iter):
        p = platt_probability(m, A, B)  # = 1/(1+exp(f))
        q = 1.0 - p
        d2 = p * q
        h11 = float(np.sum(m * m * d2)) + 1e-12
        h22 = float(np.sum(d2)) + 1e-12
        h21 = float(np.sum(m * d2))
        d1 = t - p
        g1 = float(np.sum(m * d1))
        g2 = float(np.sum(d1))
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        det = h11 * h22 - h21 * h21
        dA = -(h22 * g1 - h21 * g2) / det
        dB = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * dA + g2 * dB
        step = 1.0
        while step >= 1e-10:
            nA, nB = A + step * dA, B + step * dB
            nf = objective(nA, nB)
            if nf < fval + 1e-4 * step * gd:
                A, B, fval = nA, nB, nf
                break
            step /= 2.0
        else:
            break
    return A, B


def calibrate(model: LinearSvmModel, margins, labels) -> LinearSvmModel:
    A, B = fit_platt(margins, labels)
    return LinearSvmModel(model.weights.copy(), model.bias, A, B)


# ---------------------------------------------------------------------------
# fusion and the incident stream


def fuse_scores(flow_score: float, tracklet_score: float) -> float:
    for v in (flow_score, tracklet_score):
        if not (0.0 <= v <= 1.0):
            raise ValueError(f"branch score {v} outside [0, 1]")
    return 0.5 * (flow_score + tracklet_score)


@dataclass(frozen=True)
class IncidentScore:
    frame_index: int
    flow_score: float
    tracklet_score: float
    confidence: float
    alert: bool = False  # confidence above the alert threshold
    alert_start: bool = False  # upward crossing

    def to_record(self) -> dict:
        return {"frame": self.frame_index, "flow_score": round(self.flow_score, 6),
                "tracklet_score": round(self.tracklet_score, 6),
                "confidence": round(self.confidence, 6), "alert": self.alert,
                "alert_start": self.alert_start}


class IncidentPooler:
    """Streaming form of :func:`incident_stream`; memory is O(window)."""

    def __init__(self, fps: float = 25.0, window_s: float = 2.0, threshold: float = ALERT_THRESHOLD):
        self.window = max(1, int(round(window_s * fps)))
        self.threshold = threshold
        self._flow: deque = deque(maxlen=self.window)
        self._trk: deque = deque(maxlen=self.window)
        self._flow_sum = 0.0
        self._trk_sum = 0.0
        self._above = False

    def push(self, frame_index: int, flow_score: float, tracklet_score: float) -> IncidentScore:
        if len(self._flow) == self.window:
            self._flow_sum -= self._flow[0]
            self._trk_sum -= self._trk[0]
        self._flow.append(flow_score)
        self._trk.append(tracklet_score)
        # re-sum to avoid drift; the window is small
        fs = math.fsum(self._flow) / len(self._flow)
        ts = math.fsum(self._trk) / len(self._trk)
        fs, ts = min(max(fs, 0.0), 1.0), min(max(ts, 0.0), 1.0)
        conf = fuse_scores(fs, ts)
        above = conf > self.threshold
        start = above and not self._above
        self._above = above
        return IncidentScore(frame_index, fs, ts, conf, above, start)


def incident_stream(
    flow_scores: Sequence[float],
    tracklet_scores: Sequence[float],
    fps: float = 25.0,
    window_s: float = 2.0,
    threshold: float = ALERT_THRESHOLD,
    frame_indices: Sequence[int] | None = None,
) -> list[IncidentScore]:
    """Trailing-window mean of each branch, fused per frame, with alert state."""
    if len(flow_scores) != len(tracklet_scores):
        raise ValueError("branch score streams differ in length")
    idx = range(len(flow_scores)) if frame_indices is None else frame_indices
    pool = IncidentPooler(fps, window_s, threshold)
    return [pool.push(int(i), float(f), float(t)) for i, f, t in zip(idx, flow_scores, tracklet_scores)]


def first_alert(stream: Sequence[IncidentScore], not_before: int | None = None) -> int | None:
    for s in stream:
        if s.alert and (not_before is None or s.frame_index >= not_before):
            return s.frame_index
    return None
