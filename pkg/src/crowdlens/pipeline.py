"""Streaming incident pipeline: per-frame flow and tracklet features, branch scores, alert stream."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import as_pixels
from .incident_flow import FlowField, flow_histogram_feature, optical_flow
from .mlcore import ALERT_THRESHOLD, IncidentPooler, IncidentScore, LinearSvmModel
from .segmentation import BackgroundModel
from .tracklets import CrowdInteractionFeature, TrackletTracker, interaction_features, pool_interaction

TRACKLET_SPAN = 10  # trailing points per live tracklet used for interaction statistics


@dataclass(frozen=True)
class IncidentConfig:
    fps: float = 25.0
    window_s: float = 2.0
    threshold: float = ALERT_THRESHOLD
    flow_downscale: int = 2
    min_flow_mag: float = 0.5
    learning_rate: float = 0.01
    diff_threshold: float = 25.0
    max_points: int = 200
    reseed_every: int = 5

    @property
    def window(self) -> int:
        return max(1, int(round(self.window_s * self.fps)))


@dataclass(frozen=True)
class IncidentFrameFeatures:
    flow: np.ndarray  # per-frame flow histogram
    tracklet: np.ndarray  # interaction statistics pooled over the trailing window (8)
    interaction: CrowdInteractionFeature


class IncidentFeatureStream:
    """Stateful per-stream feature extraction shared by training and inference."""

    def __init__(self, config: IncidentConfig = IncidentConfig(), background: np.ndarray | None = None):
        self.config = config
        self.bg = BackgroundModel(config.learning_rate, config.diff_threshold, initial=background)
        self.tracker = TrackletTracker(fps=config.fps, max_points=config.max_points,
                                       reseed_every=config.reseed_every)
        self._prev: np.ndarray | None = None
        self._inter: deque = deque(maxlen=config.window)
        self._n = 0

    def step(self, frame, frame_index: int | None = None) -> IncidentFrameFeatures:
        img = as_pixels(frame)
        idx = self._n if frame_index is None else int(frame_index)
        fg = self.bg.update_and_segment(img)
        if self._prev is None:
            H, W = img.shape
            d = self.config.flow_downscale
            zeros = np.zeros((max(1, H // d), max(1, W // d)))
            field = FlowField(zeros, zeros, d)
        else:
            field = optical_flow(self._prev, img, downscale=self.config.flow_downscale)
        flow = flow_histogram_feature(field, self.config.min_flow_mag).values
        self.tracker.step(img, fg, idx)
        inter = interaction_features(self.tracker.active(TRACKLET_SPAN))
        self._inter.append(inter)
        self._prev = img
        self._n += 1
        return IncidentFrameFeatures(flow, pool_interaction(self._inter), inter)


class IncidentPipeline:
    """Feature stream + both calibrated branch SVMs + alert pooling."""

    def __init__(
        self,
        flow_model: LinearSvmModel,
        tracklet_model: LinearSvmModel,
        config: IncidentConfig = IncidentConfig(),
        background: np.ndarray | None = None,
    ):
        self.flow_model = flow_model
        self.tracklet_model = tracklet_model
        self.config = config
        self.features = IncidentFeatureStream(config, background)
        self.pooler = IncidentPooler(config.fps, config.window_s, config.threshold)
        self._n = 0

    def step(self, frame, frame_index: int | None = None) -> IncidentScore:
        idx = self._n if frame_index is None else int(frame_index)
        f = self.features.step(frame, idx)
        fs = float(self.flow_model.probability(self.flow_model.margin(f.flow))[0])
        ts = float(self.tracklet_model.probability(self.tracklet_model.margin(f.tracklet))[0])
        self._n += 1
        return self.pooler.push(idx, fs, ts)
