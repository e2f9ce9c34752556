"""Pedestrian flow: nearest-pair trajectory association, filtering, incoming/outgoing classification."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import DetectionBox
from .mlcore import LinearSvmModel, train_svm

INCOMING = "incoming"
OUTGOING = "outgoing"


@dataclass
class Trajectory:
    id: int
    points: list = field(default_factory=list)  # (frame_index, x, y)
    state: str = "active"

    @property
    def head(self) -> tuple[float, float]:
        return self.points[-1][1], self.points[-1][2]

    @property
    def last_frame(self) -> int:
        return int(self.points[-1][0])

    def array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.float64).reshape(-1, 3)

    def reversed(self) -> "Trajectory":
        """Same path walked backwards (frame indices kept increasing)."""
        frames = [p[0] for p in self.points]
        xy = [(p[1], p[2]) for p in reversed(self.points)]
        return Trajectory(self.id, [(f, x, y) for f, (x, y) in zip(frames, xy)], self.state)

    def to_record(self) -> dict:
        return {"id": self.id, "state": self.state,
                "points": [[int(f), round(float(x), 3), round(float(y), 3)] for f, x, y in self.points]}


@dataclass(frozen=True)
class FlowCounts:
    window_start: int
    window_end: int
    incoming: int = 0
    outgoing: int = 0


def associate(
    active: list[Trajectory],
    boxes: Sequence[DetectionBox],
    frame_index: int,
    gate: float = 40.0,
    max_gap: int = 5,
    next_id: int = 0,
) -> tuple[list[Trajectory], list[Trajectory], int]:
    """One association step.

    Repeatedly links the globally closest (head, centroid) pair within
    ``gate``; equal distances go to the lower trajectory then box index.
    Returns (still active, newly closed, next free id).
    """
    cents = [b.roi.center for b in boxes]
    pairs = []
    for i, t in enumerate(active):
        hx, hy = t.head
        for j, (cx, cy) in enumerate(cents):
            d = math.hypot(cx - hx, cy - hy)
            if d <= gate:
                pairs.append((d, i, j))
    pairs.sort()
    used_t, used_b = set(), set()
    for d, i, j in pairs:
        if i in used_t or j in used_b:
            continue
        used_t.add(i)
        used_b.add(j)
        active[i].points.append((frame_index, cents[j][0], cents[j][1]))
    still, closed = [], []
    for i, t in enumerate(active):
        if i not in used_t and frame_index - t.last_frame > max_gap:
            t.state = "closed"
            closed.append(t)
        else:
            still.append(t)
    for j, (cx, cy) in enumerate(cents):
        if j not in used_b:
            still.append(Trajectory(next_id, [(frame_index, cx, cy)]))
            next_id += 1
    return still, closed, next_id


def path_stats(t: Trajectory) -> tuple[float, float, np.ndarray]:
    """(path length, net displacement length, net displacement vector)."""
    p = t.array()[:, 1:]
    if len(p) < 2:
        return 0.0, 0.0, np.zeros(2)
    steps = np.diff(p, axis=0)
    path = float(np.sum(np.hypot(steps[:, 0], steps[:, 1])))
    net = p[-1] - p[0]
    return path, float(math.hypot(net[0], net[1])), net


def keep_trajectory(t: Trajectory, min_length: int = 10, min_straightness: float = 0.6,
                    min_displacement: float = 20.0) -> bool:
    if len(t.points) < min_length:
        return False
    path, net, _ = path_stats(t)
    if path <= 0:
        return False
    return net / path >= min_straightness and net >= min_displacement


def filter_trajectories(closed: Iterable[Trajectory], min_length: int = 10, min_straightness: float = 0.6,
                        min_displacement: float = 20.0) -> list[Trajectory]:
    return [t for t in closed if keep_trajectory(t, min_length, min_straightness, min_displacement)]


def direction_features(t: Trajectory) -> np.ndarray:
    """(cos theta, sin theta, dx/|d|, dy/|d|, mean speed); theta is the net
    displacement angle. The trig terms are taken from the normalised
    displacement so that reversing the path negates them exactly."""
    path, net, d = path_stats(t)
    span = t.points[-1][0] - t.points[0][0] if len(t.points) > 1 else 0
    speed = path / span if span > 0 else 0.0
    if net == 0:
        return np.array([0.0, 0.0, 0.0, 0.0, speed])
    c, s = d[0] / net, d[1] / net
    return np.array([c, s, d[0] / net, d[1] / net, speed])


def direction_label(t: Trajectory, gate_axis=(0.0, 1.0)) -> str:
    """Ground-truth semantic: moving along +gate_axis is incoming."""
    _, _, d = path_stats(t)
    return INCOMING if float(d @ np.asarray(gate_axis, dtype=np.float64)) >= 0 else OUTGOING


def classify_direction(t: Trajectory, model: LinearSvmModel) -> str:
    return INCOMING if float(model.margin(direction_features(t))[0]) >= 0 else OUTGOING


def train_direction(trajectories: Sequence[Trajectory], labels: Sequence[str], C: float = 1.0,
                    seed: int = 0, epochs: int = 200) -> LinearSvmModel:
    """Offset-free linear SVM on direction features (+1 = incoming)."""
    X = np.vstack([direction_features(t) for t in trajectories])
    y = np.array([1.0 if lab == INCOMING else -1.0 for lab in labels])
    return train_svm(X, y, C=C, epochs=epochs, seed=seed, fit_bias=False, standardize=False)


def trajectory_from_points(tid: int, points) -> Trajectory:
    return Trajectory(tid, [(int(f), float(x), float(y)) for f, x, y in np.asarray(points)], "closed")


class FlowTracker:
    """Streaming tracker that reports incoming/outgoing counts per window of frames."""

    def __init__(self, model: LinearSvmModel | None, window: int = 250, gate: float = 40.0, max_gap: int = 5,
                 min_length: int = 10, min_straightness: float = 0.6, min_displacement: float = 20.0):
        self.model = model
        self.window = window
        self.gate = gate
        self.max_gap = max_gap
        self.filter_args = (min_length, min_straightness, min_displacement)
        self.active: list[Trajectory] = []
        self._next_id = 0
        self._start: int | None = None
        self._in = 0
        self._out = 0
        self.closed_log: list[Trajectory] = []
        self.keep_closed = False

    def _account(self, closed: list[Trajectory]) -> None:
        if self.keep_closed:
            self.closed_log.extend(closed)
        if self.model is None:
            return
        for t in filter_trajectories(closed, *self.filter_args):
            if classify_direction(t, self.model) == INCOMING:
                self._in += 1
            else:
                self._out += 1

    def step(self, boxes: Sequence[DetectionBox], frame_index: int) -> list[FlowCounts]:
        """Consume one frame of detections; returns completed windows."""
        out = []
        if self._start is None:
            self._start = frame_index
        while frame_index >= self._start + self.window:
            out.append(FlowCounts(self._start, self._start + self.window - 1, self._in, self._out))
            self._start += self.window
            self._in = self._out = 0
        self.active, closed, self._next_id = associate(
            self.active, boxes, frame_index, self.gate, self.max_gap, self._next_id)
        self._account(closed)
        return out

    def finish(self, last_frame: int) -> list[FlowCounts]:
        for t in self.active:
            t.state = "closed"
        self._account(self.active)
        self.active = []
        if self._start is None:
            return []
        return [FlowCounts(self._start, last_frame, self._in, self._out)]


def write_flow_csv(path, counts: Sequence[FlowCounts]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window_start", "window_end", "incoming", "outgoing"])
        for c in counts:
            w.writerow([c.window_start, c.window_end, c.incoming, c.outgoing])


def dump_trajectories(path, trajectories: Sequence[Trajectory]) -> None:
    with open(path, "w") as fh:
        for t in trajectories:
            fh.write(json.dumps(t.to_record()) + "\n")
