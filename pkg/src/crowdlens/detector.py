"""Counting by detection: channel features, boosted depth-2 trees, sliding windows, NMS."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numba
import numpy as np

from .core import CLASSES, DEFAULT_MIN_BOX_PX, DetectionBox, FormatError, Roi, as_pixels

N_CHANNELS = 8
N_ORIENT = 6
MODEL_VERSION = 1

WINDOWS = {"full_body": (32, 64), "head_shoulders": (24, 24), "head": (16, 16)}

# sin/cos of the orientation-bin boundaries at 30, 60, 90, 120, 150 degrees
_BOUND_COS = np.array([math.cos(math.radians(a)) for a in (30, 60, 90, 120, 150)])
_BOUND_SIN = np.array([math.sin(math.radians(a)) for a in (30, 60, 90, 120, 150)])
_BOUND_COS[2] = 0.0


@dataclass(frozen=True)
class ChannelStack:
    """Sum-pooled channels, shape (8, ceil(H/cell), ceil(W/cell)).

    Channel 0 is L1 Sobel magnitude, 1..6 are magnitude split by unsigned
    orientation (30 degree bins from 0), 7 is 3x3 local variance.
    """

    channels: np.ndarray
    cell_size: int

    @property
    def shape(self):
        return self.channels.shape


@numba.njit(cache=True)
def _channel_kernel(img, cell, bcos, bsin):
    H, W = img.shape
    Hc = (H + cell - 1) // cell
    Wc = (W + cell - 1) // cell
    acc = np.zeros((Hc, Wc, N_CHANNELS), dtype=np.int64)
    vs = np.zeros(W, dtype=np.int32)
    vs2 = np.zeros(W, dtype=np.int32)
    for y in range(1, H - 1):
        cy = y // cell
        r0 = img[y - 1]
        r1 = img[y]
        r2 = img[y + 1]
        for x in range(W):
            a = np.int32(r0[x])
            b = np.int32(r1[x])
            c = np.int32(r2[x])
            vs[x] = a + b + c
            vs2[x] = a * a + b * b + c * c
        for x in range(1, W - 1):
            cx = x // cell
            tl = np.int32(r0[x - 1])
            tr = np.int32(r0[x + 1])
            bl = np.int32(r2[x - 1])
            br = np.int32(r2[x + 1])
            gx = (tr - tl) + 2 * (np.int32(r1[x + 1]) - np.int32(r1[x - 1])) + (br - bl)
            gy = (bl - tl) + 2 * (np.int32(r2[x]) - np.int32(r0[x])) + (br - tr)
            mag = abs(gx) + abs(gy)
            if mag > 0:
                # fold into [0, 180)
                if gy < 0 or (gy == 0 and gx < 0):
                    gx = -gx
                    gy = -gy
                bin_ = 0
                for k in range(5):
                    if bcos[k] * gy - bsin[k] * gx >= 0.0:
                        bin_ = k + 1
                acc[cy, cx, 0] += mag
                acc[cy, cx, 1 + bin_] += mag
            s = vs[x - 1] + vs[x] + vs[x + 1]
            s2 = vs2[x - 1] + vs2[x] + vs2[x + 1]
            acc[cy, cx, N_CHANNELS - 1] += 9 * s2 - s * s
    out = np.empty((N_CHANNELS, Hc, Wc), dtype=np.float64)
    for i in range(Hc):
        for j in range(Wc):
            for c in range(N_CHANNELS - 1):
                out[c, i, j] = acc[i, j, c]
            out[N_CHANNELS - 1, i, j] = acc[i, j, N_CHANNELS - 1] / 81.0
    return out


def compute_channels(frame, cell_size: int = 4) -> ChannelStack:
    img = np.ascontiguousarray(as_pixels(frame), dtype=np.uint8)
    return ChannelStack(_channel_kernel(img, cell_size, _BOUND_COS, _BOUND_SIN), cell_size)


# ---------------------------------------------------------------------------
# boosted depth-2 trees


@dataclass
class BoostedModel:
    """Discrete AdaBoost over depth-2 trees on window channel-cell features.

    Each round is a tree stored as three split nodes (root, left, right)
    with four leaves in {-1, +1}. A child without a split carries threshold
    +inf so that evaluation always takes its first leaf.
    """

    cls: str
    window_w: int
    window_h: int
    cell_size: int
    features: np.ndarray  # (rounds, 3) int64 flat feature indices
    thresholds: np.ndarray  # (rounds, 3) float64
    leaves: np.ndarray  # (rounds, 4) float64
    weights: np.ndarray  # (rounds,) float64
    score_threshold: float = 0.0
    reject_trace: np.ndarray | None = None  # (rounds,) partial-score floor
    history: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.weights) < 1:
            raise ValueError("a boosted model needs at least one round")
        n_feat = self.n_features
        if self.features.min() < 0 or self.features.max() >= n_feat:
            raise ValueError("tree feature index outside the window")

    @property
    def cells_w(self) -> int:
        return self.window_w // self.cell_size

    @property
    def cells_h(self) -> int:
        return self.window_h // self.cell_size

    @property
    def n_features(self) -> int:
        return N_CHANNELS * self.cells_w * self.cells_h

    @property
    def n_rounds(self) -> int:
        return len(self.weights)

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def margins(self, X: np.ndarray, rounds: int | None = None) -> np.ndarray:
        """Ensemble margin of flat feature rows X (n, n_features)."""
        X = np.atleast_2d(X)
        r = self.n_rounds if rounds is None else rounds
        total = np.zeros(len(X))
        for t in range(r):
            f, th, lv = self.features[t], self.thresholds[t], self.leaves[t]
            go_left = X[:, f[0]] < th[0]
            left_leaf = np.where(X[:, f[1]] < th[1], lv[0], lv[1])
            right_leaf = np.where(X[:, f[2]] < th[2], lv[2], lv[3])
            total += self.weights[t] * np.where(go_left, left_leaf, right_leaf)
        return total

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.where(self.margins(X) >= self.score_threshold, 1, -1)

    def score_of(self, margin):
        """Map a raw margin to (0, 1); the margin is normalised by the total round weight."""
        return 1.0 / (1.0 + np.exp(-10.0 * np.asarray(margin) / self.total_weight))

    # serialisation ---------------------------------------------------------

    def _tree_json(self, t: int) -> dict:
        f, th, lv = self.features[t], self.thresholds[t], self.leaves[t]

        def child(node, a, b):
            if math.isinf(th[node]):
                return {"leaf": float(lv[a])}
            return {"feature": int(f[node]), "threshold": float(th[node]),
                    "left": {"leaf": float(lv[a])}, "right": {"leaf": float(lv[b])}}

        return {"feature": int(f[0]), "threshold": float(th[0]),
                "left": child(1, 0, 1), "right": child(2, 2, 3)}

    def to_json(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "kind": "boosted_trees",
            "class": self.cls,
            "window_w": self.window_w,
            "window_h": self.window_h,
            "cell_size": self.cell_size,
            "score_threshold": float(self.score_threshold),
            "reject_trace": None if self.reject_trace is None else [float(v) for v in self.reject_trace],
            "rounds": [{"weight": float(self.weights[t]), "tree": self._tree_json(t)} for t in range(self.n_rounds)],
        }

    @classmethod
    def from_json(cls, d: dict) -> "BoostedModel":
        if d.get("version") != MODEL_VERSION or d.get("kind") != "boosted_trees":
            raise FormatError("not a boosted-tree model file of a supported version")
        R = len(d["rounds"])
        feats = np.zeros((R, 3), dtype=np.int64)
        ths = np.full((R, 3), np.inf)
        leaves = np.zeros((R, 4))
        weights = np.zeros(R)
        for t, rnd in enumerate(d["rounds"]):
            tree = rnd["tree"]
            weights[t] = rnd["weight"]
            feats[t, 0], ths[t, 0] = tree["feature"], tree["threshold"]
            for node, key in ((1, "left"), (2, "right")):
                ch = tree[key]
                a = 2 * (node - 1)
                if "leaf" in ch:
                    leaves[t, a] = leaves[t, a + 1] = ch["leaf"]
                else:
                    feats[t, node], ths[t, node] = ch["feature"], ch["threshold"]
                    leaves[t, a], leaves[t, a + 1] = ch["left"]["leaf"], ch["right"]["leaf"]
        trace = d.get("reject_trace")
        return cls(
            d["class"], int(d["window_w"]), int(d["window_h"]), int(d["cell_size"]),
            feats, ths, leaves, weights, float(d["score_threshold"]),
            None if trace is None else np.asarray(trace, dtype=np.float64),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "BoostedModel":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: malformed model file") from exc


def _quantize(X: np.ndarray, max_bins: int):
    """Per-feature cut points (midpoints between distinct values) and bin indices."""
    n, F = X.shape
    Xs = np.sort(X, axis=0)
    cuts = []
    Xb = np.empty((n, F), dtype=np.uint8)
    for f in range(F):
        u = np.unique(Xs[:, f])
        mids = (u[:-1] + u[1:]) / 2.0
        if len(mids) > max_bins - 1:
            pick = np.linspace(0, len(mids) - 1, max_bins - 1).round().astype(int)
            mids = np.unique(mids[pick])
        cuts.append(mids)
        Xb[:, f] = np.searchsorted(mids, X[:, f], side="right")
    return cuts, Xb


@numba.njit(cache=True)
def _hist_kernel(Xb, w, y, idx, n_bins):
    F = Xb.shape[1]
    h = np.zeros((F, n_bins, 2))
    for ii in range(idx.shape[0]):
        i = idx[ii]
        lab = 1 if y[i] > 0 else 0
        wi = w[i]
        for f in range(F):
            h[f, Xb[i, f], lab] += wi
    return h


def _best_split(hist: np.ndarray, n_cuts: np.ndarray):
    """Lowest weighted-error split of a node from its (F, bins, 2) histogram.

    Returns (error, feature, cut) or None if every split leaves a child empty.
    Ties go to the lowest feature index, then the lowest cut.
    """
    F, B, _ = hist.shape
    cum = np.cumsum(hist, axis=1)  # cum[:, k] = mass in bins <= k
    tot = cum[:, -1, :]
    left = cum[:, :-1, :]  # cut k+1: bins <= k go left
    right = tot[:, None, :] - left
    err = np.minimum(left[..., 0], left[..., 1]) + np.minimum(right[..., 0], right[..., 1])
    lw = left.sum(axis=2)
    rw = right.sum(axis=2)
    valid = (lw > 0) & (rw > 0) & (np.arange(B - 1)[None, :] < n_cuts[:, None])
    err = np.where(valid, err, np.inf)
    flat = int(np.argmin(err))
    f, k = divmod(flat, B - 1)
    if not np.isfinite(err[f, k]):
        return None
    return float(err[f, k]), f, k + 1


def _leaf(p: float, n: float) -> float:
    return 1.0 if p > n else -1.0


def train_boosted(
    positives: np.ndarray,
    negatives: np.ndarray,
    cls: str = "full_body",
    window: tuple[int, int] | None = None,
    cell_size: int = 4,
    rounds: int = 256,
    max_bins: int = 64,
) -> BoostedModel:
    """Discrete AdaBoost with greedy depth-2 trees.

    ``positives``/``negatives`` are flat window features (n, n_features)
    or window-sized channel arrays (n, 8, cells_h, cells_w).
    """
    P = np.asarray(positives, dtype=np.float64).reshape(len(positives), -1)
    N = np.asarray(negatives, dtype=np.float64).reshape(len(negatives), -1)
    if len(P) == 0 or len(N) == 0:
        raise ValueError("training needs both positive and negative examples")
    if len(P) < 10 or len(N) < 10:
        raise ValueError("training needs at least 10 examples per class")
    if P.shape[1] != N.shape[1]:
        raise ValueError("positive and negative windows differ in size")
    ww, wh = window if window is not None else WINDOWS[cls]
    X = np.vstack([P, N])
    y = np.concatenate([np.ones(len(P)), -np.ones(len(N))])
    F = X.shape[1]
    if F != N_CHANNELS * (ww // cell_size) * (wh // cell_size):
        raise ValueError(f"feature length {F} does not match a {ww}x{wh} window")
    cuts, Xb = _quantize(X, max_bins)
    n_cuts = np.array([len(c) for c in cuts])
    n = len(y)
    # balanced start so that the stringent class prior does not dominate
    w = np.where(y > 0, 0.5 / len(P), 0.5 / len(N))
    all_idx = np.arange(n)

    feats, ths, leaves, alphas = [], [], [], []
    margin = np.zeros(n)
    train_err, exp_loss = [], []

    def thr_of(f, k):
        return float(cuts[f][k - 1])

    for _ in range(rounds):
        hist = _hist_kernel(Xb, w, y, all_idx, max_bins)
        root = _best_split(hist, n_cuts)
        if root is None:
            break
        _, f0, k0 = root
        go_left = Xb[:, f0] < k0
        node_f = [f0, 0, 0]
        node_t = [thr_of(f0, k0), math.inf, math.inf]
        lv = [0.0, 0.0, 0.0, 0.0]
        hl = _hist_kernel(Xb, w, y, np.flatnonzero(go_left), max_bins)
        hr = hist - hl
        for node, h, side in ((1, hl, go_left), (2, hr, ~go_left)):
            a = 2 * (node - 1)
            split = _best_split(h, n_cuts)
            p_tot, n_tot = h[0, :, 1].sum(), h[0, :, 0].sum()
            if split is None or split[0] >= min(p_tot, n_tot):
                lv[a] = lv[a + 1] = _leaf(p_tot, n_tot)
                continue
            _, f, k = split
            node_f[node], node_t[node] = f, thr_of(f, k)
            sub = np.flatnonzero(side)
            lo = Xb[sub, f] < k
            lv[a] = _leaf(w[sub[lo & (y[sub] > 0)]].sum(), w[sub[lo & (y[sub] < 0)]].sum())
            lv[a + 1] = _leaf(w[sub[~lo & (y[sub] > 0)]].sum(), w[sub[~lo & (y[sub] < 0)]].sum())
        # evaluate the tree on the training set
        l_out = np.where(X[:, node_f[1]] < node_t[1], lv[0], lv[1])
        r_out = np.where(X[:, node_f[2]] < node_t[2], lv[2], lv[3])
        h_out = np.where(X[:, f0] < node_t[0], l_out, r_out)
        eps = float(w[h_out != y].sum() / w.sum())
        if eps >= 0.5:
            break
        eps_c = min(max(eps, 1e-10), 1 - 1e-10)
        alpha = 0.5 * math.log((1 - eps_c) / eps_c)
        feats.append(node_f)
        ths.append(node_t)
        leaves.append(lv)
        alphas.append(alpha)
        margin += alpha * h_out
        train_err.append(float(np.mean(np.where(margin >= 0, 1, -1) != y)))
        exp_loss.append(float(np.mean(np.exp(-y * margin))))
        w = w * np.exp(-alpha * y * h_out)
        w /= w.sum()
        if eps < 1e-10:
            break
    if not alphas:
        raise ValueError("no weak learner better than chance")
    model = BoostedModel(
        cls, ww, wh, cell_size,
        np.asarray(feats, dtype=np.int64), np.asarray(ths, dtype=np.float64),
        np.asarray(leaves, dtype=np.float64), np.asarray(alphas, dtype=np.float64),
        score_threshold=0.0,
    )
    model.history = {"train_error": train_err, "exp_loss": exp_loss}
    return model


def fit_reject_trace(model: BoostedModel, positives: np.ndarray, slack: float = 0.0) -> np.ndarray:
    """Soft-cascade floor: per round, the lowest partial score of any positive
    that ends above the model threshold, minus ``slack`` (fraction of total weight)."""
    X = np.asarray(positives, dtype=np.float64).reshape(len(positives), -1)
    partial = np.zeros((model.n_rounds, len(X)))
    acc = np.zeros(len(X))
    for t in range(model.n_rounds):
        acc = acc + model.weights[t] * _tree_outputs(model, t, X)
        partial[t] = acc
    keep = partial[-1] >= model.score_threshold
    if not keep.any():
        return np.full(model.n_rounds, -np.inf)
    return partial[:, keep].min(axis=1) - slack * model.total_weight


def _tree_outputs(model: BoostedModel, t: int, X: np.ndarray) -> np.ndarray:
    f, th, lv = model.features[t], model.thresholds[t], model.leaves[t]
    left_leaf = np.where(X[:, f[1]] < th[1], lv[0], lv[1])
    right_leaf = np.where(X[:, f[2]] < th[2], lv[2], lv[3])
    return np.where(X[:, f[0]] < th[0], left_leaf, right_leaf)


# ---------------------------------------------------------------------------
# sliding-window detection


@numba.njit(cache=True)
def _scan_kernel(ch, cw, chh, stride, feats, ths, leaves, alphas, floor, score_thr):
    _, Hc, Wc = ch.shape
    R = alphas.shape[0]
    area = cw * chh
    remaining = np.zeros(R + 1)
    for t in range(R - 1, -1, -1):
        remaining[t] = remaining[t + 1] + alphas[t]
    # decode feature indices once
    fc = np.empty((R, 3), dtype=np.int64)
    fr = np.empty((R, 3), dtype=np.int64)
    fx = np.empty((R, 3), dtype=np.int64)
    for t in range(R):
        for k in range(3):
            idx = feats[t, k]
            fc[t, k] = idx // area
            rem = idx % area
            fr[t, k] = rem // cw
            fx[t, k] = rem % cw
    ys = []
    xs = []
    ms = []
    for y0 in range(0, Hc - chh + 1, stride):
        for x0 in range(0, Wc - cw + 1, stride):
            s = 0.0
            alive = True
            for t in range(R):
                if ch[fc[t, 0], y0 + fr[t, 0], x0 + fx[t, 0]] < ths[t, 0]:
                    if ch[fc[t, 1], y0 + fr[t, 1], x0 + fx[t, 1]] < ths[t, 1]:
                        s += alphas[t] * leaves[t, 0]
                    else:
                        s += alphas[t] * leaves[t, 1]
                else:
                    if ch[fc[t, 2], y0 + fr[t, 2], x0 + fx[t, 2]] < ths[t, 2]:
                        s += alphas[t] * leaves[t, 2]
                    else:
                        s += alphas[t] * leaves[t, 3]
                # exact bound, then the learned soft-cascade floor
                if s + remaining[t + 1] < score_thr or s < floor[t]:
                    alive = False
                    break
            if alive and s >= score_thr:
                ys.append(y0)
                xs.append(x0)
                ms.append(s)
    n = len(ys)
    out_y = np.empty(n, dtype=np.int64)
    out_x = np.empty(n, dtype=np.int64)
    out_m = np.empty(n)
    for i in range(n):
        out_y[i] = ys[i]
        out_x[i] = xs[i]
        out_m[i] = ms[i]
    return out_y, out_x, out_m


@dataclass(frozen=True)
class DetectorConfig:
    cell_size: int = 4
    stride: int = 1  # in cells
    scale_factor: float = 1.25
    n_scales: int = 5
    nms_iou: float = 0.5
    min_box_px: int = DEFAULT_MIN_BOX_PX
    cascade: bool = True

    def scales(self) -> list[float]:
        return [self.scale_factor**i for i in range(self.n_scales)]


@dataclass(frozen=True)
class PyramidLevel:
    scale: float
    sx: float
    sy: float
    stack: ChannelStack


def channel_pyramid(frame, scales, cell_size: int = 4) -> list[PyramidLevel]:
    img = as_pixels(frame)
    H, W = img.shape
    levels = []
    for s in scales:
        Ws, Hs = max(1, int(round(W / s))), max(1, int(round(H / s)))
        small = img if (Ws, Hs) == (W, H) else cv2.resize(img, (Ws, Hs), interpolation=cv2.INTER_AREA)
        levels.append(PyramidLevel(s, W / Ws, H / Hs, compute_channels(small, cell_size)))
    return levels


@dataclass(frozen=True)
class Candidate:
    roi: Roi
    cls: str
    margin: float
    score: float


def _window_roi(level: PyramidLevel, model: BoostedModel, cy: int, cx: int, W: int, H: int):
    c = model.cell_size
    x = int(round(cx * c * level.sx))
    y = int(round(cy * c * level.sy))
    w = int(round(model.window_w * level.sx))
    h = int(round(model.window_h * level.sy))
    w = min(w, W)
    h = min(h, H)
    x = min(max(x, 0), W - w)
    y = min(max(y, 0), H - h)
    return Roi(x, y, w, h)


def scan_level(level: PyramidLevel, model: BoostedModel, config: DetectorConfig, W: int, H: int,
               score_threshold: float | None = None) -> list[Candidate]:
    thr = model.score_threshold if score_threshold is None else score_threshold
    if min(round(model.window_w * level.sx), round(model.window_h * level.sy)) < config.min_box_px:
        return []
    ch = level.stack.channels
    if ch.shape[1] < model.cells_h or ch.shape[2] < model.cells_w:
        return []
    floor = model.reject_trace if (config.cascade and model.reject_trace is not None) else None
    if floor is None:
        floor = np.full(model.n_rounds, -np.inf)
    ys, xs, ms = _scan_kernel(
        ch, model.cells_w, model.cells_h, config.stride, model.features, model.thresholds,
        model.leaves, model.weights, floor, thr,
    )
    scores = model.score_of(ms)
    return [
        Candidate(_window_roi(level, model, int(cy), int(cx), W, H), model.cls, float(m), float(s))
        for cy, cx, m, s in zip(ys, xs, ms, scores)
    ]


def nms(cands: list, iou: float = 0.5) -> list:
    """Greedy NMS: highest score first, ties by smaller y then smaller x.

    Works on anything with ``.roi`` and ``.score`` (Candidate or DetectionBox);
    candidates are ordered by their raw margin when available.
    """
    order = sorted(
        cands, key=lambda c: (-getattr(c, "margin_n", c.score), c.roi.y, c.roi.x)
    )
    kept = []
    for c in order:
        if all(c.roi.iou(k.roi) <= iou for k in kept):
            kept.append(c)
    return kept


@dataclass(frozen=True)
class _Ranked:
    roi: Roi
    cls: str
    score: float
    margin_n: float


def detect(
    frame,
    models: list[BoostedModel],
    scales: list[float] | None = None,
    config: DetectorConfig = DetectorConfig(),
    score_thresholds: dict | None = None,
    levels: list[PyramidLevel] | None = None,
) -> list[DetectionBox]:
    """Sliding-window detection over a scale pyramid with per-class then cross-class NMS."""
    img = as_pixels(frame)
    H, W = img.shape
    scales = config.scales() if scales is None else list(scales)
    if not scales:
        raise ValueError("at least one scale is required")
    if levels is None:
        levels = channel_pyramid(img, scales, config.cell_size)
    per_class = []
    for model in models:
        thr = None if score_thresholds is None else score_thresholds.get(model.cls)
        cands = []
        for level in levels:
            cands.extend(scan_level(level, model, config, W, H, thr))
        ranked = [_Ranked(c.roi, c.cls, c.score, c.margin / model.total_weight) for c in cands]
        per_class.extend(nms(ranked, config.nms_iou))
    final = nms(per_class, config.nms_iou)
    return [DetectionBox(r.roi, r.cls, r.score) for r in final]


def count_by_detection(boxes: list[DetectionBox]) -> int:
    """Full-body boxes count once; part boxes count unless centred inside a full body."""
    bodies = [b.roi for b in boxes if b.cls == "full_body"]
    count = len(bodies)
    for b in boxes:
        if b.cls == "full_body":
            continue
        cx, cy = b.roi.center
        if not any(r.contains_point(cx, cy) for r in bodies):
            count += 1
    return count


def load_models(paths) -> list[BoostedModel]:
    return [BoostedModel.load(p) for p in paths]


__all__ = [
    "CLASSES", "WINDOWS", "ChannelStack", "compute_channels", "BoostedModel", "train_boosted",
    "fit_reject_trace", "DetectorConfig", "channel_pyramid", "scan_level", "nms", "detect",
    "count_by_detection", "load_models",
]
