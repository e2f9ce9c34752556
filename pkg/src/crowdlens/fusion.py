"""Adaptive count fusion: detections plus regression over the regions they leave uncovered."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import DetectionBox, PerspectiveMap, Roi, as_pixels
from .detector import BoostedModel, DetectorConfig, count_by_detection, detect
from .regression import (
    BlockFeatures,
    LinearCountModel,
    estimate_count_regression,
    extract_block_features,
)
from .segmentation import BackgroundModel, edge_map


@dataclass(frozen=True)
class FusedEstimate:
    detected: int
    regressed_residual: float
    detection_boxes: tuple[DetectionBox, ...] = ()
    frame_index: int = 0

    @property
    def total(self) -> float:
        return self.detected + self.regressed_residual

    def to_record(self) -> dict:
        return {"frame": self.frame_index, "detected": self.detected,
                "regressed_residual": round(self.regressed_residual, 6),
                "total": round(self.total, 6), "n_boxes": len(self.detection_boxes)}


def regression_masks(frame, fg: np.ndarray, edge_threshold: float = 80.0) -> tuple[np.ndarray, np.ndarray]:
    """Foreground mask and the edge pixels that lie on it."""
    return fg, edge_map(frame, edge_threshold) & fg


def fuse_count(
    frame,
    fg: np.ndarray,
    edges: np.ndarray,
    det_models: Sequence[BoostedModel],
    reg_model: LinearCountModel,
    pmap: PerspectiveMap = PerspectiveMap(),
    config: DetectorConfig = DetectorConfig(),
    boxes: Sequence[DetectionBox] | None = None,
    frame_index: int = 0,
) -> FusedEstimate:
    """detected + regression on features with every detection box excluded.

    ``boxes`` may be passed to reuse an earlier detection pass.
    """
    if boxes is None:
        boxes = detect(frame, list(det_models), config=config) if det_models else []
    detected = count_by_detection(list(boxes))
    feats = extract_block_features(fg, edges, pmap, [b.roi for b in boxes])
    residual = estimate_count_regression(reg_model, feats)
    return FusedEstimate(detected, residual, tuple(boxes), frame_index)


@dataclass
class CountBreakdown:
    """Everything one frame yields: fused estimate plus the two base estimates."""

    fused: FusedEstimate
    regression_only: float
    plain_features: BlockFeatures | None
    masked_features: BlockFeatures


class CountingPipeline:
    """Per-stream counting state: background model, detectors, regressors.

    ``process`` consumes frames in order. ``plain_model`` (trained on
    unmasked features) is optional and only feeds the regression-only
    baseline.
    """

    def __init__(
        self,
        det_models: Sequence[BoostedModel],
        residual_model: LinearCountModel,
        pmap: PerspectiveMap = PerspectiveMap(),
        config: DetectorConfig = DetectorConfig(),
        plain_model: LinearCountModel | None = None,
        background: np.ndarray | None = None,
        learning_rate: float = 0.01,
        diff_threshold: float = 25.0,
        edge_threshold: float = 80.0,
    ):
        self.det_models = list(det_models)
        self.residual_model = residual_model
        self.plain_model = plain_model
        self.pmap = pmap
        self.config = config
        self.edge_threshold = edge_threshold
        self.bg = BackgroundModel(learning_rate, diff_threshold, initial=background)
        self.frames = 0
        self.seconds = 0.0

    def step(self, frame, frame_index: int | None = None) -> CountBreakdown:
        t0 = time.perf_counter()
        img = as_pixels(frame)
        idx = self.frames if frame_index is None else frame_index
        if frame_index is None and hasattr(frame, "index"):
            idx = frame.index
        fg = self.bg.update_and_segment(img)
        fg, edges = regression_masks(img, fg, self.edge_threshold)
        boxes = detect(img, self.det_models, config=self.config) if self.det_models else []
        rois: list[Roi] = [b.roi for b in boxes]
        masked = extract_block_features(fg, edges, self.pmap, rois)
        fused = FusedEstimate(count_by_detection(boxes), estimate_count_regression(self.residual_model, masked),
                              tuple(boxes), idx)
        plain = None
        reg_only = 0.0
        if self.plain_model is not None:
            plain = extract_block_features(fg, edges, self.pmap) if rois else masked
            reg_only = estimate_count_regression(self.plain_model, plain)
        self.seconds += time.perf_counter() - t0
        self.frames += 1
        return CountBreakdown(fused, reg_only, plain, masked)

    def process(self, frame, frame_index: int | None = None) -> FusedEstimate:
        return self.step(frame, frame_index).fused

    @property
    def fps(self) -> float:
        return self.frames / self.seconds if self.seconds > 0 else 0.0
