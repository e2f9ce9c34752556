"""Crowd counting, pedestrian flow and incident detection for fixed CCTV streams."""

from .core import (
    CLASSES,
    DetectionBox,
    Frame,
    GroundTruth,
    PerspectiveMap,
    Roi,
    StreamConfig,
)

__version__ = "0.1.0"

__all__ = [
    "CLASSES",
    "DetectionBox",
    "Frame",
    "GroundTruth",
    "PerspectiveMap",
    "Roi",
    "StreamConfig",
    "__version__",
]
