"""Running-average background subtraction and Sobel edge maps."""

from __future__ import annotations

import math

import cv2
import numpy as np

from .core import StreamError, as_pixels, write_pgm


def sobel(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3x3 Sobel responses (correlation form) as int32; the 1-px border is zero."""
    a = np.asarray(img, dtype=np.int32)
    gx = np.zeros_like(a)
    gy = np.zeros_like(a)
    if a.shape[0] < 3 or a.shape[1] < 3:
        return gx, gy
    tl, tc, tr = a[:-2, :-2], a[:-2, 1:-1], a[:-2, 2:]
    ml, mr = a[1:-1, :-2], a[1:-1, 2:]
    bl, bc, br = a[2:, :-2], a[2:, 1:-1], a[2:, 2:]
    gx[1:-1, 1:-1] = (tr - tl) + 2 * (mr - ml) + (br - bl)
    gy[1:-1, 1:-1] = (bl - tl) + 2 * (bc - tc) + (br - tr)
    return gx, gy


def edge_map(frame, threshold: float = 80.0) -> np.ndarray:
    """Pixels whose L1 Sobel magnitude |gx| + |gy| exceeds ``threshold``."""
    gx, gy = sobel(as_pixels(frame))
    mag = np.abs(gx) + np.abs(gy)
    mask = mag > threshold
    mask[0, :] = mask[-1, :] = False
    mask[:, 0] = mask[:, -1] = False
    return mask


def majority_filter(mask: np.ndarray, min_votes: int = 4) -> np.ndarray:
    """One pass of a 3x3 vote filter: set iff at least ``min_votes`` of 9 are set."""
    votes = cv2.boxFilter(
        mask.astype(np.uint8), -1, (3, 3), normalize=False, borderType=cv2.BORDER_CONSTANT
    )
    return votes >= min_votes


def frames_to_converge(diff_threshold: float, learning_rate: float) -> int:
    """Upper bound on frames for a full-scale (255) change to fall under the threshold."""
    return math.ceil(math.log(diff_threshold / 255.0) / math.log(1.0 - learning_rate))


class BackgroundModel:
    """Exponential running-average background, one per stream.

    The first frame seen initialises the mean (and yields an empty mask)
    unless an explicit background image is supplied.
    """

    def __init__(
        self,
        learning_rate: float = 0.01,
        diff_threshold: float = 25.0,
        cleanup: bool = True,
        initial: np.ndarray | None = None,
    ):
        if not 0.0 < learning_rate < 1.0:
            raise ValueError("learning_rate must lie in (0, 1)")
        self.learning_rate = learning_rate
        self.diff_threshold = diff_threshold
        self.cleanup = cleanup
        self.mean = None if initial is None else np.asarray(as_pixels(initial), dtype=np.float32).copy()

    @property
    def shape(self):
        return None if self.mean is None else self.mean.shape

    def update_and_segment(self, frame) -> np.ndarray:
        px = as_pixels(frame)
        if self.mean is None:
            self.mean = px.astype(np.float32)
            return np.zeros(px.shape, dtype=bool)
        if px.shape != self.mean.shape:
            raise StreamError(f"frame shape {px.shape} does not match background {self.mean.shape}")
        cur = px.astype(np.float32)
        fg = np.abs(cur - self.mean) > self.diff_threshold
        # mean <- (1 - a) * mean + a * frame, in place
        self.mean *= 1.0 - self.learning_rate
        self.mean += self.learning_rate * cur
        if self.cleanup:
            fg = majority_filter(fg)
        return fg


def update_and_segment(model: BackgroundModel, frame) -> np.ndarray:
    return model.update_and_segment(frame)


def dump_mask(path, mask: np.ndarray) -> None:
    write_pgm(path, np.asarray(mask, dtype=bool))
