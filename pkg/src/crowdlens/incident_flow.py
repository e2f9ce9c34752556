"""Aggregate-flow incident branch: block-matching optical flow and per-block flow histograms."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import cv2
import numba
import numpy as np

from .core import StreamError, as_pixels

N_ORIENT_BINS = 8


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement (u, v) in pixels/frame at flow resolution."""

    u: np.ndarray
    v: np.ndarray
    downscale: int = 1

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def height(self) -> int:
        return self.u.shape[0]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


@numba.njit(cache=True)
def _search_window(prev, nxt, y0, x0, cu, cv, block, radius, state):
    # state: best cost, u, v, |d|^2, found
    H, W = prev.shape
    for dv in range(cv - radius, cv + radius + 1):
        yy = y0 + dv
        if yy < 0 or yy + block > H:
            continue
        for du in range(cu - radius, cu + radius + 1):
            xx = x0 + du
            if xx < 0 or xx + block > W:
                continue
            cost = np.int64(0)
            for r in range(block):
                for c in range(block):
                    cost += abs(np.int64(prev[y0 + r, x0 + c]) - np.int64(nxt[yy + r, xx + c]))
                if state[4] and cost > state[0]:
                    break
            mag = du * du + dv * dv
            better = state[4] == 0 or cost < state[0]
            if not better and cost == state[0]:
                better = mag < state[3] or (mag == state[3] and (du < state[1] or (du == state[1] and dv < state[2])))
            if better:
                state[0] = cost
                state[1] = du
                state[2] = dv
                state[3] = mag
                state[4] = 1


@numba.njit(cache=True)
def _match_level(prev, nxt, gu, gv, block, radius):
    nby, nbx = gu.shape
    out_u = np.zeros((nby, nbx), dtype=np.int64)
    out_v = np.zeros((nby, nbx), dtype=np.int64)
    state = np.zeros(5, dtype=np.int64)
    for by in range(nby):
        for bx in range(nbx):
            state[:] = 0
            _search_window(prev, nxt, by * block, bx * block, gu[by, bx], gv[by, bx], block, radius, state)
            if gu[by, bx] != 0 or gv[by, bx] != 0:
                # a bad coarse guess must not hide small motions
                _search_window(prev, nxt, by * block, bx * block, 0, 0, block, radius, state)
            if state[4]:
                out_u[by, bx] = state[1]
                out_v[by, bx] = state[2]
    return out_u, out_v


def _downsample(img: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return img
    H, W = img.shape
    return cv2.resize(img, (max(1, W // factor), max(1, H // factor)), interpolation=cv2.INTER_AREA)


def optical_flow(
    prev,
    nxt,
    downscale: int = 2,
    levels: int = 3,
    block: int = 8,
    radius: int = 7,
) -> FlowField:
    """Coarse-to-fine SAD block matching.

    Each level searches +-radius around twice the coarser block's vector
    and around zero; ties go to the smallest displacement, then the smallest (u, v). The
    finest block vectors are replicated over their pixels.
    """
    a, b = as_pixels(prev), as_pixels(nxt)
    if a.shape != b.shape:
        raise StreamError(f"frame shapes differ: {a.shape} vs {b.shape}")
    a = _downsample(a, downscale)
    b = _downsample(b, downscale)
    pa, pb = [a], [b]
    for _ in range(levels - 1):
        if min(pa[-1].shape) < 2 * block:
            break
        pa.append(_downsample(pa[-1], 2))
        pb.append(_downsample(pb[-1], 2))
    gu = gv = None
    for lvl in range(len(pa) - 1, -1, -1):
        A = np.ascontiguousarray(pa[lvl])
        B = np.ascontiguousarray(pb[lvl])
        nby, nbx = max(1, A.shape[0] // block), max(1, A.shape[1] // block)
        if gu is None:
            init_u = np.zeros((nby, nbx), dtype=np.int64)
            init_v = np.zeros((nby, nbx), dtype=np.int64)
        else:
            iy = np.minimum(np.arange(nby) // 2, gu.shape[0] - 1)
            ix = np.minimum(np.arange(nbx) // 2, gu.shape[1] - 1)
            init_u = 2 * gu[np.ix_(iy, ix)]
            init_v = 2 * gv[np.ix_(iy, ix)]
        gu, gv = _match_level(A, B, init_u, init_v, block, radius)
    H, W = a.shape
    iy = np.minimum(np.arange(H) // block, gu.shape[0] - 1)
    ix = np.minimum(np.arange(W) // block, gu.shape[1] - 1)
    u = gu[np.ix_(iy, ix)].astype(np.float64)
    v = gv[np.ix_(iy, ix)].astype(np.float64)
    return FlowField(u, v, downscale)


@dataclass(frozen=True)
class FlowHistogramFeature:
    """Per block: 8 magnitude-weighted orientation bins then the mean magnitude."""

    values: np.ndarray
    grid_w: int
    grid_h: int

    def block(self, gx: int, gy: int) -> np.ndarray:
        k = (gy * self.grid_w + gx) * (N_ORIENT_BINS + 1)
        return self.values[k : k + N_ORIENT_BINS + 1]


def _block_index(height: int, width: int, grid_w: int, grid_h: int) -> np.ndarray:
    ry = (np.arange(height) * grid_h) // height
    rx = (np.arange(width) * grid_w) // width
    return ry[:, None] * grid_w + rx[None, :]


def flow_histogram_feature(
    field: FlowField, min_mag: float = 0.5, grid_w: int = 8, grid_h: int = 6
) -> FlowHistogramFeature:
    H, W = field.u.shape
    block = _block_index(H, W, grid_w, grid_h).ravel()
    u = field.u.ravel()
    v = field.v.ravel()
    mag = np.hypot(u, v)
    ang = np.degrees(np.arctan2(v, u)) % 360.0
    bins = np.minimum((ang // 45.0).astype(np.int64), N_ORIENT_BINS - 1)
    n_blocks = grid_w * grid_h
    strong = mag >= min_mag
    hist = np.bincount(
        block[strong] * N_ORIENT_BINS + bins[strong],
        weights=mag[strong],
        minlength=n_blocks * N_ORIENT_BINS,
    ).reshape(n_blocks, N_ORIENT_BINS)
    sums = np.bincount(block, weights=mag, minlength=n_blocks)
    counts = np.bincount(block, minlength=n_blocks)
    mean = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    out = np.hstack([hist, mean[:, None]]).ravel()
    return FlowHistogramFeature(out, grid_w, grid_h)


def score_flow_branch(feature: FlowHistogramFeature | np.ndarray, model) -> float:
    values = feature.values if isinstance(feature, FlowHistogramFeature) else np.asarray(feature)
    if len(values) != model.feature_dim:
        raise ValueError(f"flow feature has {len(values)} entries, model expects {model.feature_dim}")
    return float(model.margin(values)[0])


def block_mean_flow(field: FlowField, grid_w: int = 8, grid_h: int = 6) -> np.ndarray:
    """(grid_h, grid_w, 2) mean (u, v) per block."""
    H, W = field.u.shape
    block = _block_index(H, W, grid_w, grid_h).ravel()
    n = grid_w * grid_h
    counts = np.maximum(np.bincount(block, minlength=n), 1)
    mu = np.bincount(block, weights=field.u.ravel(), minlength=n) / counts
    mv = np.bincount(block, weights=field.v.ravel(), minlength=n) / counts
    return np.stack([mu, mv], axis=1).reshape(grid_h, grid_w, 2)


def dump_flow_csv(path, field: FlowField, grid_w: int = 8, grid_h: int = 6) -> None:
    means = block_mean_flow(field, grid_w, grid_h)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["block_x", "block_y", "mean_u", "mean_v"])
        for gy in range(grid_h):
            for gx in range(grid_w):
                w.writerow([gx, gy, f"{means[gy, gx, 0]:.6f}", f"{means[gy, gx, 1]:.6f}"])


def mean_flow_magnitude(field: FlowField) -> float:
    return float(math.fsum(field.magnitude().ravel()) / field.u.size)
