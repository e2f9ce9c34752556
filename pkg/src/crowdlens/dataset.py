"""On-disk streams (frames + truth.jsonl) presented with the same surface as a generated Scene."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    DEFAULT_FPS,
    GroundTruth,
    StreamConfig,
    StreamError,
    incident_onset,
    list_frame_files,
    load_annotations,
    read_kv_file,
    read_pgm,
)


@dataclass(frozen=True)
class StreamInfo:
    width: int
    height: int
    fps: float
    scenario: str


@dataclass
class DiskTruth:
    frames: list[GroundTruth]
    agents: list[np.ndarray]
    onset: int | None

    def counts(self) -> np.ndarray:
        return np.array([gt.count for gt in self.frames])


class DiskScene:
    """A directory written by ``Scene.write`` (or laid out the same way).

    Agent geometry is recovered from the full-body boxes: centre x, foot
    row (box bottom) and height.
    """

    def __init__(self, directory, fps: float | None = None):
        self.directory = Path(directory)
        frames_dir = self.directory / "frames"
        self.files = list_frame_files(frames_dir if frames_dir.is_dir() else self.directory)
        if not self.files:
            raise StreamError(f"{directory}: no frames found")
        first = read_pgm(self.files[0])
        kv = self.directory / "scene.kv"
        scene_kv = read_kv_file(kv) if kv.exists() else {}
        stream_kv = self.directory / "stream.kv"
        cfg = StreamConfig.load(stream_kv) if stream_kv.exists() else StreamConfig()
        self.config = cfg
        rate = float(fps if fps is not None else scene_kv.get("fps", cfg.fps or DEFAULT_FPS))
        self.spec = StreamInfo(first.shape[1], first.shape[0], rate, str(scene_kv.get("scenario", "unknown")))
        truth_path = self.directory / "truth.jsonl"
        if truth_path.exists():
            ann = load_annotations(truth_path, cfg.min_box_px, (first.shape[1], first.shape[0]))
            missing = [i for i in range(len(self.files)) if i not in ann]
            if missing:
                raise StreamError(f"{truth_path}: no annotation for frame {missing[0]}")
            frames = [ann[i] for i in range(len(self.files))]
        else:
            frames = [GroundTruth(i, 0) for i in range(len(self.files))]
        agents = []
        for gt in frames:
            rows = [(k, b.roi.x + b.roi.w / 2.0, b.roi.y + b.roi.h, b.roi.h, 0.0, 0.0)
                    for k, b in enumerate(gt.boxes) if b.cls == "full_body"]
            agents.append(np.asarray(rows, dtype=np.float64).reshape(-1, 6))
        self.truth = DiskTruth(frames, agents, incident_onset({gt.frame_index: gt for gt in frames}))
        bg = self.directory / "background.pgm"
        self.background = read_pgm(bg) if bg.exists() else None

    def __len__(self) -> int:
        return len(self.files)

    def render(self, t: int) -> np.ndarray:
        img = read_pgm(self.files[t])
        if img.shape != (self.spec.height, self.spec.width):
            raise StreamError(f"{self.files[t]}: frame size differs from the first frame")
        return img
