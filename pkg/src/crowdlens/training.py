"""Model training from synthetic scenes: detectors, count regressors, and incident classifiers."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import CLASSES, PerspectiveMap, Roi
from .detector import (
    WINDOWS,
    BoostedModel,
    DetectorConfig,
    PyramidLevel,
    channel_pyramid,
    fit_reject_trace,
    nms,
    scan_level,
    train_boosted,
)
from .fusion import CountingPipeline
from .mlcore import LinearSvmModel, TrainingError, calibrate, incident_stream, train_svm
from .pipeline import IncidentConfig, IncidentFeatureStream
from .regression import RIDGE, LinearCountModel, train_linear
from .synth import BOX_ASPECT, Scene

log = logging.getLogger(__name__)

# part boxes relative to the agent height h: (side / h, top offset / h)
PART_GEOMETRY = {"head_shoulders": (0.40, 0.0), "head": (0.22, 0.0)}
# soft-cascade floor slack, as a fraction of the total round weight; zero
# slack drops partly cluttered positives that would end above threshold
REJECT_SLACK = 0.05


def part_roi(cls: str, cx: float, foot: float, h: float, W: int, H: int) -> Roi:
    """Ground-truth box of one agent for a detector class, clipped into the frame."""
    if cls == "full_body":
        w, hh = BOX_ASPECT * h, h
        x0, y0 = cx - w / 2.0, foot - h
    else:
        side, top = PART_GEOMETRY[cls]
        w = hh = side * h
        x0, y0 = cx - w / 2.0, foot - h + top * h
    w, hh = int(round(w)), int(round(hh))
    x = min(max(int(round(x0)), 0), W - w)
    y = min(max(int(round(y0)), 0), H - hh)
    return Roi(x, y, w, hh)


def agent_rois(scene: Scene, t: int, cls: str) -> list[tuple[Roi, float]]:
    """(box, visible fraction) per agent; visibility counts box pixels not
    covered by the full-body boxes of agents drawn in front."""
    spec = scene.spec
    agents = scene.truth.agents[t]
    if len(agents) == 0:
        return []
    order = np.argsort(agents[:, 2], kind="stable")
    bodies = [part_roi("full_body", a[1], a[2], a[3], spec.width, spec.height) for a in agents]
    out = []
    for rank, k in enumerate(order):
        a = agents[k]
        roi = part_roi(cls, a[1], a[2], a[3], spec.width, spec.height)
        cover = np.zeros((roi.h, roi.w), dtype=bool)
        for j in order[rank + 1 :]:
            b = bodies[j]
            x0, y0 = max(b.x, roi.x), max(b.y, roi.y)
            x1, y1 = min(b.x + b.w, roi.x + roi.w), min(b.y + b.h, roi.y + roi.h)
            if x1 > x0 and y1 > y0:
                cover[y0 - roi.y : y1 - roi.y, x0 - roi.x : x1 - roi.x] = True
        out.append((roi, 1.0 - cover.mean()))
    return out


def _window_features(level: PyramidLevel, cls: str, cy: int, cx: int, cell: int) -> np.ndarray | None:
    ww, wh = WINDOWS[cls]
    ch = level.stack.channels
    ny, nx = wh // cell, ww // cell
    if cy < 0 or cx < 0 or cy + ny > ch.shape[1] or cx + nx > ch.shape[2]:
        return None
    return ch[:, cy : cy + ny, cx : cx + nx].ravel()


def _best_level(levels: Sequence[PyramidLevel], cls: str, roi: Roi) -> int:
    wh = WINDOWS[cls][1]
    return int(np.argmin([abs(math.log(roi.h / (wh * lv.sy))) for lv in levels]))


def positive_window(levels, cls: str, roi: Roi, cell: int) -> np.ndarray | None:
    lv = levels[_best_level(levels, cls, roi)]
    cx = int(round(roi.x / (cell * lv.sx)))
    cy = int(round(roi.y / (cell * lv.sy)))
    return _window_features(lv, cls, cy, cx, cell)


def _window_roi(level: PyramidLevel, cls: str, cy: int, cx: int, cell: int) -> Roi:
    ww, wh = WINDOWS[cls]
    return Roi(int(round(cx * cell * level.sx)), int(round(cy * cell * level.sy)),
               max(1, int(round(ww * level.sx))), max(1, int(round(wh * level.sy))))


@dataclass
class DetectorData:
    positives: list
    negatives: list


def collect_detector_samples(
    scenes: Sequence[Scene],
    cls: str,
    config: DetectorConfig = DetectorConfig(),
    frame_step: int = 5,
    neg_per_frame: int = 30,
    min_visible: float = 0.8,
    seed: int = 0,
) -> DetectorData:
    rng = np.random.default_rng([seed, 11, CLASSES.index(cls)])
    cell = config.cell_size
    pos, neg = [], []
    for scene in scenes:
        for t in range(0, len(scene), frame_step):
            levels = channel_pyramid(scene.render(t), config.scales(), cell)
            truth = agent_rois(scene, t, cls)
            for roi, vis in truth:
                if vis >= min_visible:
                    f = positive_window(levels, cls, roi, cell)
                    if f is not None:
                        pos.append(f)
            boxes = [r for r, _ in truth]
            ww, wh = WINDOWS[cls]
            tries = 0
            got = 0
            while got < neg_per_frame and tries < 20 * neg_per_frame:
                tries += 1
                li = int(rng.integers(len(levels)))
                lv = levels[li]
                Hc, Wc = lv.stack.channels.shape[1:]
                ny, nx = wh // cell, ww // cell
                if Hc < ny or Wc < nx:
                    continue
                cy = int(rng.integers(0, Hc - ny + 1))
                cx = int(rng.integers(0, Wc - nx + 1))
                roi = _window_roi(lv, cls, cy, cx, cell)
                if any(roi.iou(b) >= 0.3 for b in boxes):
                    continue
                neg.append(_window_features(lv, cls, cy, cx, cell))
                got += 1
    return DetectorData(pos, neg)


def _match_count(boxes: Sequence[Roi], truth: Sequence[Roi], iou: float = 0.5) -> int:
    """Greedy one-to-one matches (boxes taken in the given order)."""
    used = set()
    hits = 0
    for b in boxes:
        best, bj = iou, -1
        for j, g in enumerate(truth):
            if j in used:
                continue
            v = b.iou(g)
            if v >= best:
                best, bj = v, j
        if bj >= 0:
            used.add(bj)
            hits += 1
    return hits


def mine_hard_negatives(
    model: BoostedModel,
    scenes: Sequence[Scene],
    config: DetectorConfig,
    frame_step: int = 7,
    max_per_frame: int = 40,
    offset: int = 2,
) -> list:
    """Windows scoring above zero that do not overlap any true box of the class."""
    cell = config.cell_size
    cfg = DetectorConfig(**{**config.__dict__, "cascade": False})
    out = []
    for scene in scenes:
        W, H = scene.spec.width, scene.spec.height
        for t in range(offset, len(scene), frame_step):
            levels = channel_pyramid(scene.render(t), config.scales(), cell)
            boxes = [r for r, _ in agent_rois(scene, t, model.cls)]
            hard = []
            for lv in levels:
                for c in scan_level(lv, model, cfg, W, H, 0.0):
                    if all(c.roi.iou(b) < 0.3 for b in boxes):
                        cy = int(round(c.roi.y / (cell * lv.sy)))
                        cx = int(round(c.roi.x / (cell * lv.sx)))
                        f = _window_features(lv, model.cls, cy, cx, cell)
                        if f is not None:
                            hard.append((-c.margin, len(hard), f))
            hard.sort(key=lambda r: (r[0], r[1]))
            out.extend(f for _, _, f in hard[:max_per_frame])
    return out


def calibrate_threshold(
    model: BoostedModel,
    scenes: Sequence[Scene],
    config: DetectorConfig,
    max_fp_per_frame: float = 0.01,
    frame_step: int = 4,
    offset: int = 1,
) -> float:
    """Lowest margin threshold whose per-class NMS output has at most
    ``max_fp_per_frame`` unmatched boxes per validation frame."""
    cell = config.cell_size
    cfg = DetectorConfig(**{**config.__dict__, "cascade": False})
    floor = -0.2 * model.total_weight
    frames = []
    for scene in scenes:
        W, H = scene.spec.width, scene.spec.height
        for t in range(offset, len(scene), frame_step):
            levels = channel_pyramid(scene.render(t), config.scales(), cell)
            cands = []
            for lv in levels:
                cands.extend(scan_level(lv, model, cfg, W, H, floor))
            truth = [r for r, _ in agent_rois(scene, t, model.cls)]
            frames.append((cands, truth))
    margins = sorted({round(c.margin, 9) for cands, _ in frames for c in cands})
    if not margins:
        return 0.0
    grid = np.unique(np.quantile(margins, np.linspace(0.0, 1.0, 61)))
    chosen = float(grid[-1]) + 1e-9
    for thr in grid:
        fp = 0
        for cands, truth in frames:
            kept = nms([c for c in cands if c.margin >= thr], config.nms_iou)
            fp += len(kept) - _match_count([k.roi for k in kept], truth)
        if fp <= max_fp_per_frame * len(frames):
            chosen = float(thr)
            break
    return chosen


def train_detector(
    train_scenes: Sequence[Scene],
    val_scenes: Sequence[Scene],
    cls: str,
    config: DetectorConfig = DetectorConfig(),
    rounds: int = 256,
    mining_rounds: int = 1,
    seed: int = 0,
) -> BoostedModel:
    data = collect_detector_samples(train_scenes, cls, config, seed=seed)
    if len(data.positives) < 10:
        raise ValueError(f"{cls}: only {len(data.positives)} usable positive windows")
    P = np.vstack(data.positives)
    N = np.vstack(data.negatives)
    window = WINDOWS[cls]
    model = train_boosted(P, N, cls, window, config.cell_size, rounds)
    for _ in range(mining_rounds):
        hard = mine_hard_negatives(model, train_scenes, config)
        log.info("%s: %d positives, %d negatives, %d hard negatives", cls, len(P), len(N), len(hard))
        if not hard:
            break
        N = np.vstack([N, np.vstack(hard)])
        model = train_boosted(P, N, cls, window, config.cell_size, rounds)
    model.score_threshold = calibrate_threshold(model, val_scenes, config)
    model.reject_trace = fit_reject_trace(model, P, REJECT_SLACK)
    log.info("%s: %d rounds, threshold %.4f", cls, model.n_rounds, model.score_threshold)
    return model


# ---------------------------------------------------------------------------
# count regression


@dataclass
class CountRecord:
    frame_index: int
    truth: int
    detected: int
    plain: np.ndarray
    masked: np.ndarray


def count_records(
    scene: Scene,
    det_models: Sequence[BoostedModel],
    pmap: PerspectiveMap,
    config: DetectorConfig = DetectorConfig(),
    use_plate: bool = True,
) -> list[CountRecord]:
    """Run the counting front end over a scene and keep per-frame features."""
    pipe = CountingPipeline(det_models, LinearCountModel.zero(), pmap, config,
                            plain_model=LinearCountModel.zero(),
                            background=scene.background if use_plate else None)
    out = []
    for t in range(len(scene)):
        b = pipe.step(scene.render(t), t)
        out.append(CountRecord(t, scene.truth.frames[t].count, b.fused.detected,
                               b.plain_features.values, b.masked_features.values))
    return out


def train_count_models(records: Sequence[CountRecord], ridge: float = RIDGE) -> tuple[LinearCountModel, LinearCountModel]:
    """(plain regressor on unmasked features, residual regressor on masked
    features targeting truth - detected)."""
    plain = train_linear([r.plain for r in records], [r.truth for r in records], ridge)
    residual = train_linear([r.masked for r in records], [r.truth - r.detected for r in records], ridge)
    return plain, residual


# ---------------------------------------------------------------------------
# incident branches


@dataclass
class ClipFeatures:
    scenario: str
    onset: int | None
    flow: np.ndarray  # (T, 432)
    tracklet: np.ndarray  # (T, 8)


def clip_features(scene: Scene, config: IncidentConfig | None = None, use_plate: bool = True) -> ClipFeatures:
    cfg = config or IncidentConfig(fps=scene.spec.fps)
    fs = IncidentFeatureStream(cfg, scene.background if use_plate else None)
    F, T = [], []
    for t in range(len(scene)):
        f = fs.step(scene.render(t), t)
        F.append(f.flow)
        T.append(f.tracklet)
    return ClipFeatures(scene.spec.scenario, scene.truth.onset, np.vstack(F), np.vstack(T))


def frame_labels(clip: ClipFeatures, fps: float = 25.0, settle_s: float = 1.0, skip: int = 5) -> np.ndarray:
    """+1 for incident frames at least ``settle_s`` past onset, -1 for calm
    frames, 0 (unused) for the transition and the first ``skip`` frames."""
    n = len(clip.flow)
    y = -np.ones(n)
    y[: min(skip, n)] = 0
    if clip.onset is not None:
        settle = clip.onset + int(round(settle_s * fps))
        y[clip.onset : settle] = 0
        y[settle:] = 1
    return y


def train_incident_models(
    clips: Sequence[ClipFeatures], C: float = 1.0, epochs: int = 100, seed: int = 0, fps: float = 25.0
) -> tuple[LinearSvmModel, LinearSvmModel]:
    """Flow and tracklet SVMs on per-frame labels, each Platt-calibrated on its own training margins."""
    labels = [frame_labels(c, fps) for c in clips]
    y = np.concatenate(labels)
    use = y != 0
    if not (np.any(y > 0) and np.any(y < 0)):
        raise TrainingError("incident training needs both incident and calm frames")
    out = []
    for key in ("flow", "tracklet"):
        X = np.vstack([getattr(c, key) for c in clips])[use]
        m = train_svm(X, y[use], C=C, epochs=epochs, seed=seed)
        out.append(calibrate(m, m.margin(X), y[use]))
    return out[0], out[1]


def score_clip(clip: ClipFeatures, flow_model: LinearSvmModel, tracklet_model: LinearSvmModel,
               fps: float = 25.0, window_s: float = 2.0) -> list:
    fs = flow_model.probability(flow_model.margin(clip.flow))
    ts = tracklet_model.probability(tracklet_model.margin(clip.tracklet))
    return incident_stream(fs, ts, fps, window_s)
