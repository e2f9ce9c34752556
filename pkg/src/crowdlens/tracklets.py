"""Interest-point incident branch: corner selection, short tracklets, interaction statistics."""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass
from typing import Sequence

import cv2
import numba
import numpy as np

from .core import as_pixels

T_MAX_S = 5.0
N_NEIGHBORS = 8
D0 = 50.0
SPEED_GATE = 0.1


@dataclass(frozen=True)
class Tracklet:
    id: int
    points: np.ndarray  # (n, 3) int64: frame, x, y

    @property
    def velocity(self) -> np.ndarray:
        return np.diff(self.points[:, 1:].astype(np.float64), axis=0)

    @property
    def mean_velocity(self) -> np.ndarray:
        p = self.points
        n = len(p) - 1
        if n < 1:
            return np.zeros(2)
        return (p[-1, 1:] - p[0, 1:]).astype(np.float64) / n

    @property
    def mean_position(self) -> np.ndarray:
        return self.points[:, 1:].astype(np.float64).mean(axis=0)

    @property
    def first_frame(self) -> int:
        return int(self.points[0, 0])

    @property
    def last_frame(self) -> int:
        return int(self.points[-1, 0])

    def __len__(self) -> int:
        return len(self.points)

    def to_record(self) -> dict:
        return {"id": self.id, "points": self.points.tolist(),
                "mean_velocity": [round(float(v), 6) for v in self.mean_velocity]}


@dataclass(frozen=True)
class CrowdInteractionFeature:
    collectiveness: float = 0.0
    conflict: float = 0.0
    mean_speed: float = 0.0
    active_tracklets: int = 0

    def as_array(self) -> np.ndarray:
        return np.array([self.collectiveness, self.conflict, self.mean_speed, float(self.active_tracklets)])


# ---------------------------------------------------------------------------
# interest points


def harris_response(image, block_size: int = 3, k: float = 0.04) -> np.ndarray:
    img = as_pixels(image).astype(np.float32)
    return cv2.cornerHarris(img, block_size, 3, k, borderType=cv2.BORDER_REFLECT)


@numba.njit(cache=True)
def _greedy_spacing(xs, ys, min_distance, max_points):
    keep = np.empty(min(len(xs), max_points), dtype=np.int64)
    n = 0
    d2 = min_distance * min_distance
    for i in range(len(xs)):
        ok = True
        for j in range(n):
            dx = xs[i] - xs[keep[j]]
            dy = ys[i] - ys[keep[j]]
            if dx * dx + dy * dy < d2:
                ok = False
                break
        if ok:
            keep[n] = i
            n += 1
            if n == max_points:
                break
    return keep[:n]


def select_interest_points(
    frame,
    fg: np.ndarray,
    max_points: int = 200,
    min_distance: int = 8,
    quality: float = 0.01,
    exclude: Sequence[tuple[int, int]] = (),
) -> list[tuple[int, int]]:
    """Harris corners inside the foreground, strongest first, at least
    ``min_distance`` apart; equal responses are taken in (y, x) order.
    Points closer than ``min_distance`` to any of ``exclude`` are skipped."""
    if max_points <= 0:
        return []
    R = harris_response(frame)
    fg = np.asarray(fg, dtype=bool)
    vals = np.where(fg, R, 0.0)
    peak = float(vals.max()) if vals.size else 0.0
    if peak <= 0.0:
        return []
    ys, xs = np.nonzero(fg & (R > quality * peak))
    r = R[ys, xs]
    order = np.lexsort((xs, ys, -r))
    ex = np.asarray(exclude, dtype=np.int64).reshape(-1, 2)
    cx = np.concatenate([ex[:, 0], xs[order]]).astype(np.int64)
    cy = np.concatenate([ex[:, 1], ys[order]]).astype(np.int64)
    # excluded points are seeded first and may not be capped away
    keep = _greedy_spacing(cx, cy, min_distance, max_points + len(ex))
    keep = keep[keep >= len(ex)][:max_points]
    return [(int(cx[i]), int(cy[i])) for i in keep]


# ---------------------------------------------------------------------------
# tracking


@numba.njit(cache=True)
def _match_points(prev, cur, xs, ys, half, radius):
    H, W = prev.shape
    n = len(xs)
    nx = np.empty(n, dtype=np.int64)
    ny = np.empty(n, dtype=np.int64)
    cost = np.zeros(n, dtype=np.int64)
    ok = np.zeros(n, dtype=np.bool_)
    for k in range(n):
        x = xs[k]
        y = ys[k]
        if x - half < 0 or y - half < 0 or x + half >= W or y + half >= H:
            continue
        best = np.int64(-1)
        bdx = 0
        bdy = 0
        bmag = 0
        for dy in range(-radius, radius + 1):
            yy = y + dy
            if yy - half < 0 or yy + half >= H:
                continue
            for dx in range(-radius, radius + 1):
                xx = x + dx
                if xx - half < 0 or xx + half >= W:
                    continue
                c = np.int64(0)
                for r in range(-half, half + 1):
                    for s in range(-half, half + 1):
                        c += abs(np.int64(prev[y + r, x + s]) - np.int64(cur[yy + r, xx + s]))
                    if best >= 0 and c > best:
                        break
                mag = dx * dx + dy * dy
                if best < 0 or c < best or (c == best and (mag < bmag or (mag == bmag and (dx < bdx or (dx == bdx and dy < bdy))))):
                    best = c
                    bdx = dx
                    bdy = dy
                    bmag = mag
        if best >= 0:
            nx[k] = x + bdx
            ny[k] = y + bdy
            cost[k] = best
            ok[k] = True
    return nx, ny, cost, ok


class _Live:
    __slots__ = ("id", "points", "costs")

    def __init__(self, tid: int, frame_index: int, x: int, y: int):
        self.id = tid
        self.points = [(frame_index, x, y)]
        self.costs: list[int] = []  # kept sorted

    def median_cost(self) -> float:
        c, n = self.costs, len(self.costs)
        return float(c[n // 2]) if n % 2 else 0.5 * (c[n // 2 - 1] + c[n // 2])

    def tracklet(self, last: int | None = None) -> Tracklet:
        pts = self.points if last is None else self.points[-last:]
        return Tracklet(self.id, np.asarray(pts, dtype=np.int64))


class TrackletTracker:
    """Streaming tracklet extraction.

    Each live point is matched from the previous frame into the current one
    by SAD over a square template. A tracklet ends when the match cost jumps
    above ``spike_factor`` times the running median of its earlier costs
    (the median is floored at ``cost_floor``), when its template leaves the
    frame, or when it reaches ``t_max_s`` seconds. New points are seeded in
    the foreground every ``reseed_every`` frames.
    """

    def __init__(
        self,
        fps: float = 25.0,
        max_points: int = 200,
        min_distance: int = 8,
        template: int = 9,
        search_radius: int = 10,
        spike_factor: float = 3.0,
        cost_floor: float | None = None,
        t_max_s: float = T_MAX_S,
        min_points: int = 3,
        reseed_every: int = 5,
    ):
        self.fps = fps
        self.max_points = max_points
        self.min_distance = min_distance
        self.half = template // 2
        self.radius = search_radius
        self.spike_factor = spike_factor
        self.cost_floor = 4.0 * template * template if cost_floor is None else cost_floor
        self.max_len = max(2, int(math.floor(t_max_s * fps)))
        self.min_points = min_points
        self.reseed_every = max(1, reseed_every)
        self._live: list[_Live] = []
        self._prev: np.ndarray | None = None
        self._next_id = 0
        self._n = 0

    def _finish(self, tr: _Live, out: list[Tracklet]) -> None:
        if len(tr.points) >= self.min_points:
            out.append(tr.tracklet())

    def step(self, frame, fg: np.ndarray | None, frame_index: int | None = None) -> list[Tracklet]:
        """Advance one frame; returns the tracklets that ended."""
        cur = np.ascontiguousarray(as_pixels(frame))
        idx = self._n if frame_index is None else int(frame_index)
        done: list[Tracklet] = []
        if self._prev is not None and self._live:
            xs = np.array([t.points[-1][1] for t in self._live], dtype=np.int64)
            ys = np.array([t.points[-1][2] for t in self._live], dtype=np.int64)
            nx, ny, cost, ok = _match_points(self._prev, cur, xs, ys, self.half, self.radius)
            keep: list[_Live] = []
            for k, tr in enumerate(self._live):
                if not ok[k]:
                    self._finish(tr, done)
                    continue
                if tr.costs:
                    ref = max(tr.median_cost(), self.cost_floor)
                    if cost[k] > self.spike_factor * ref:
                        self._finish(tr, done)
                        continue
                tr.points.append((idx, int(nx[k]), int(ny[k])))
                bisect.insort(tr.costs, int(cost[k]))
                if len(tr.points) >= self.max_len:
                    self._finish(tr, done)
                else:
                    keep.append(tr)
            self._live = keep
        if fg is not None and self._n % self.reseed_every == 0 and len(self._live) < self.max_points:
            heads = [(t.points[-1][1], t.points[-1][2]) for t in self._live]
            pts = select_interest_points(cur, fg, self.max_points - len(self._live), self.min_distance, exclude=heads)
            for x, y in pts:
                self._live.append(_Live(self._next_id, idx, x, y))
                self._next_id += 1
        self._prev = cur
        self._n += 1
        return done

    def active(self, span: int | None = None) -> list[Tracklet]:
        """Live tracklets with at least ``min_points`` points, optionally
        trimmed to their last ``span`` points."""
        return [t.tracklet(span) for t in self._live if len(t.points) >= self.min_points]

    def flush(self) -> list[Tracklet]:
        done: list[Tracklet] = []
        for tr in self._live:
            self._finish(tr, done)
        self._live = []
        return done


def track_tracklets(frames: Sequence, fg_masks: Sequence | None = None, **kwargs) -> list[Tracklet]:
    """Run a tracker over a frame window and return every tracklet, ordered by id.

    Without masks, points are seeded on the first frame only, everywhere.
    """
    trk = TrackletTracker(**kwargs)
    out: list[Tracklet] = []
    for i, f in enumerate(frames):
        if fg_masks is not None:
            fg = fg_masks[i]
        else:
            fg = np.ones(as_pixels(f).shape, dtype=bool) if i == 0 else None
        out.extend(trk.step(f, fg, i))
    out.extend(trk.flush())
    return sorted(out, key=lambda t: t.id)


def dump_tracklets(path, tracklets: Sequence[Tracklet]) -> None:
    with open(path, "w") as fh:
        for t in tracklets:
            fh.write(json.dumps(t.to_record()) + "\n")


# ---------------------------------------------------------------------------
# interaction statistics


def interaction_from_arrays(
    positions: np.ndarray,
    velocities: np.ndarray,
    k: int = N_NEIGHBORS,
    d0: float = D0,
    speed_gate: float = SPEED_GATE,
) -> CrowdInteractionFeature:
    P = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    V = np.asarray(velocities, dtype=np.float64).reshape(-1, 2)
    n = len(P)
    if n < 2:
        return CrowdInteractionFeature(active_tracklets=n)
    speed = np.hypot(V[:, 0], V[:, 1])
    moving = speed >= speed_gate
    theta = np.arctan2(V[:, 1], V[:, 0])
    dist = np.hypot(P[:, None, 0] - P[None, :, 0], P[:, None, 1] - P[None, :, 1])
    np.fill_diagonal(dist, np.inf)
    kk = min(k, n - 1)
    nbr = np.argsort(dist, axis=1, kind="stable")[:, :kk]
    rows = np.repeat(np.arange(n), kk)
    cols = nbr.ravel()
    # cos of the angle difference is exactly 1 for identical directions
    cos = np.cos(theta[rows] - theta[cols])
    cos = np.where(moving[rows] & moving[cols], np.clip(cos, -1.0, 1.0), 0.0)
    d = dist[rows, cols]
    near = np.where(d > 0, np.minimum(1.0, d0 / np.where(d > 0, d, 1.0)), 1.0)
    conflict = np.maximum(0.0, -cos) * near
    return CrowdInteractionFeature(
        float(np.mean(cos)), float(np.mean(conflict)), float(np.mean(speed)), n
    )


def interaction_features(tracklets: Sequence[Tracklet], **kwargs) -> CrowdInteractionFeature:
    if len(tracklets) < 2:
        return CrowdInteractionFeature(active_tracklets=len(tracklets))
    P = np.array([t.points[:, 1:].mean(axis=0) for t in tracklets])
    V = np.array([(t.points[-1, 1:] - t.points[0, 1:]) / max(len(t.points) - 1, 1) for t in tracklets])
    return interaction_from_arrays(P, V, **kwargs)


def pool_interaction(window) -> np.ndarray:
    """Mean then max of each of the four statistics over a window of frames."""
    rows = [f.as_array() if isinstance(f, CrowdInteractionFeature) else np.asarray(f, dtype=np.float64)
            for f in window]
    if not rows:
        return np.zeros(8)
    A = np.vstack(rows)
    return np.concatenate([A.mean(axis=0), A.max(axis=0)])


def score_tracklet_branch(window, model) -> float:
    x = pool_interaction(window)
    return float(model.margin(x)[0])
