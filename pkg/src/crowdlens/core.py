"""Shared domain types, PGM/annotation I/O and the perspective map."""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

CLASSES = ("full_body", "head_shoulders", "head")
DEFAULT_MIN_BOX_PX = 30
DEFAULT_FPS = 25.0


class FormatError(ValueError):
    """A file could not be parsed."""


class StreamError(ValueError):
    """Frames in a stream are inconsistent with each other or with a model."""


class ValidationError(ValueError):
    """A record violates a declared contract (box size, bounds, counts)."""


@dataclass(frozen=True)
class Frame:
    pixels: np.ndarray  # (height, width) uint8
    index: int = 0
    timestamp_ms: float = 0.0

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.dtype != np.uint8:
            raise ValueError("frame pixels must be a 2-D uint8 array")
        if px.shape[0] < 64 or px.shape[1] < 64:
            raise ValueError(f"frame too small: {px.shape[1]}x{px.shape[0]} (minimum 64x64)")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def as_pixels(image) -> np.ndarray:
    """Accept a Frame or a bare 2-D array."""
    if isinstance(image, Frame):
        return image.pixels
    return np.asarray(image)


@dataclass(frozen=True)
class Roi:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValidationError(f"empty roi {self}")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def contains_point(self, px: float, py: float) -> bool:
        return self.x <= px < self.x + self.w and self.y <= py < self.y + self.h

    def within(self, width: int, height: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x + self.w <= width and self.y + self.h <= height

    def iou(self, other: "Roi") -> float:
        ix = max(0, min(self.x + self.w, other.x + other.w) - max(self.x, other.x))
        iy = max(0, min(self.y + self.h, other.y + other.h) - max(self.y, other.y))
        inter = ix * iy
        union = self.w * self.h + other.w * other.h - inter
        return inter / union if union > 0 else 0.0


@dataclass(frozen=True)
class DetectionBox:
    roi: Roi
    cls: str = "full_body"
    score: float = 1.0

    def __post_init__(self):
        if self.cls not in CLASSES:
            raise ValidationError(f"unknown detection class {self.cls!r}")
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class GroundTruth:
    frame_index: int
    count: int = 0
    boxes: tuple[DetectionBox, ...] = ()
    incident: bool = False
    flow_in: int = 0
    flow_out: int = 0

    def to_record(self) -> dict:
        return {
            "frame": self.frame_index,
            "count": self.count,
            "incident": self.incident,
            "flow_in": self.flow_in,
            "flow_out": self.flow_out,
            "boxes": [
                {"x": b.roi.x, "y": b.roi.y, "w": b.roi.w, "h": b.roi.h, "class": b.cls}
                for b in self.boxes
            ],
        }


def incident_onset(truth: Mapping[int, GroundTruth]) -> int | None:
    """First frame index flagged as incident, or None."""
    flagged = [i for i, gt in truth.items() if gt.incident]
    return min(flagged) if flagged else None


@dataclass(frozen=True)
class PerspectiveMap:
    weight_top: float = 1.0
    weight_bottom: float = 1.0

    def __post_init__(self):
        if self.weight_top <= 0 or self.weight_bottom <= 0:
            raise ValueError("perspective weights must be positive")

    def weight(self, y: float, height: int) -> float:
        return perspective_weight(self, y, height)

    def row_weights(self, height: int) -> np.ndarray:
        if height == 1:
            return np.array([self.weight_top])
        y = np.arange(height, dtype=np.float64)
        return self.weight_top + (self.weight_bottom - self.weight_top) * y / (height - 1)

    @property
    def max_weight(self) -> float:
        return max(self.weight_top, self.weight_bottom)


def perspective_weight(pmap: PerspectiveMap, y: float, height: int) -> float:
    if height <= 1:
        return pmap.weight_top
    return pmap.weight_top + (pmap.weight_bottom - pmap.weight_top) * y / (height - 1)


# ---------------------------------------------------------------------------
# Stream configuration (flat key = value files)


@dataclass
class StreamConfig:
    fps: float = DEFAULT_FPS
    weight_top: float = 1.0
    weight_bottom: float = 1.0
    min_box_px: int = DEFAULT_MIN_BOX_PX
    embedding_dim: int = 0
    gate_axis: tuple[float, float] = (0.0, 1.0)
    extra: dict = field(default_factory=dict)

    @property
    def perspective(self) -> PerspectiveMap:
        return PerspectiveMap(self.weight_top, self.weight_bottom)

    @classmethod
    def from_mapping(cls, values: Mapping[str, object]) -> "StreamConfig":
        known = {f.name for f in fields(cls)} - {"extra"}
        kwargs = {}
        extra = {}
        for key, value in values.items():
            if key in known:
                kwargs[key] = value
            else:
                extra[key] = value
        if "gate_axis" in kwargs:
            kwargs["gate_axis"] = tuple(float(v) for v in kwargs["gate_axis"])
        cfg = cls(**kwargs, extra=extra)
        cfg.fps = float(cfg.fps)
        cfg.min_box_px = int(cfg.min_box_px)
        cfg.embedding_dim = int(cfg.embedding_dim)
        return cfg

    @classmethod
    def load(cls, path: str | os.PathLike) -> "StreamConfig":
        return cls.from_mapping(read_kv_file(path))


def _parse_scalar(text: str):
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def parse_kv(text: str, source: str = "<string>") -> dict:
    """Parse a flat ``key = value`` file. Lists are ``[a, b]`` or comma separated."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]") and "=" not in line):
            continue
        if "=" not in line:
            raise FormatError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_.]*", key):
            raise FormatError(f"{source}:{lineno}: bad key {key!r}")
        if value.startswith("[") and value.endswith("]"):
            inner = value[1:-1].strip()
            out[key] = [_parse_scalar(v) for v in inner.split(",")] if inner else []
        else:
            out[key] = _parse_scalar(value)
    return out


def read_kv_file(path: str | os.PathLike) -> dict:
    path = Path(path)
    return parse_kv(path.read_text(), str(path))


def write_kv_file(path: str | os.PathLike, values: Mapping[str, object]) -> None:
    lines = []
    for key, value in values.items():
        if isinstance(value, (list, tuple)):
            value = "[" + ", ".join(str(v) for v in value) + "]"
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, str):
            value = f'"{value}"'
        lines.append(f"{key} = {value}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# PGM frames

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """Read an 8-bit binary (P5) PGM into a (height, width) uint8 array."""
    data = Path(path).read_bytes()
    pos = 0
    tokens = []
    try:
        for _ in range(4):
            m = _PGM_TOKEN.match(data, pos)
            if m is None:
                raise FormatError(f"{path}: truncated PGM header")
            tokens.append(m.group(1))
            pos = m.end()
        if tokens[0] != b"P5":
            raise FormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PGM header") from exc
    if maxval > 255:
        raise FormatError(f"{path}: maxval {maxval} not supported (8-bit only)")
    if width <= 0 or height <= 0 or maxval <= 0:
        raise FormatError(f"{path}: bad PGM dimensions")
    pos += 1  # single whitespace after maxval
    body = data[pos : pos + width * height]
    if len(body) != width * height:
        raise FormatError(f"{path}: truncated pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path: str | os.PathLike, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels)
    if pixels.dtype == bool:
        pixels = pixels.astype(np.uint8) * 255
    if pixels.dtype != np.uint8 or pixels.ndim != 2:
        raise ValueError("write_pgm needs a 2-D uint8 or bool array")
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(pixels).tobytes())


def frame_filename(index: int) -> str:
    return f"frame_{index:06d}.pgm"


def list_frame_files(path: str | os.PathLike) -> list[Path]:
    """Frame files of a stream: a directory of frame_NNNNNN.pgm or a list file."""
    path = Path(path)
    if path.is_dir():
        return sorted(p for p in path.iterdir() if re.fullmatch(r"frame_\d{6}\.pgm", p.name))
    base = path.parent
    files = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            p = Path(line)
            files.append(p if p.is_absolute() else base / p)
    return files


def load_frame_sequence(path: str | os.PathLike, fps: float = DEFAULT_FPS) -> Iterator[Frame]:
    """Yield frames in order; timestamps are index * 1000 / fps."""
    shape = None
    for index, file in enumerate(list_frame_files(path)):
        pixels = read_pgm(file)
        if shape is None:
            shape = pixels.shape
        elif pixels.shape != shape:
            raise StreamError(
                f"{file}: dimensions {pixels.shape[1]}x{pixels.shape[0]} differ from stream "
                f"{shape[1]}x{shape[0]}"
            )
        yield Frame(pixels, index=index, timestamp_ms=index * 1000.0 / fps)


def write_frame_sequence(out_dir: str | os.PathLike, frames: Iterable[np.ndarray | Frame]) -> int:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = 0
    for i, frame in enumerate(frames):
        write_pgm(out_dir / frame_filename(i), as_pixels(frame))
        n += 1
    return n


# ---------------------------------------------------------------------------
# Annotations (JSON lines)


def _parse_box(raw: dict, frame_index: int) -> DetectionBox:
    try:
        roi = Roi(int(raw["x"]), int(raw["y"]), int(raw["w"]), int(raw["h"]))
        return DetectionBox(roi, raw.get("class", "full_body"), float(raw.get("score", 1.0)))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"frame {frame_index}: malformed box {raw!r}") from exc
    except ValidationError as exc:
        raise ValidationError(f"frame {frame_index}: {exc}") from exc


def parse_annotation(
    record: dict,
    min_box_px: int = DEFAULT_MIN_BOX_PX,
    frame_size: tuple[int, int] | None = None,
) -> GroundTruth:
    try:
        index = int(record["frame"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"annotation record without frame index: {record!r}") from exc
    boxes = tuple(_parse_box(b, index) for b in record.get("boxes", []))
    for box in boxes:
        if min(box.roi.w, box.roi.h) < min_box_px:
            raise ValidationError(
                f"frame {index}: box {box.roi.w}x{box.roi.h} below minimum {min_box_px} px"
            )
        if frame_size is not None and not box.roi.within(*frame_size):
            raise ValidationError(f"frame {index}: box {box.roi} outside frame bounds")
    count = int(record.get("count", len(boxes)))
    if boxes and count != len(boxes):
        raise ValidationError(f"frame {index}: count {count} != {len(boxes)} boxes")
    flow_in = int(record.get("flow_in", 0))
    flow_out = int(record.get("flow_out", 0))
    if count < 0 or flow_in < 0 or flow_out < 0:
        raise ValidationError(f"frame {index}: negative count")
    return GroundTruth(index, count, boxes, bool(record.get("incident", False)), flow_in, flow_out)


def load_annotations(
    path: str | os.PathLike,
    min_box_px: int = DEFAULT_MIN_BOX_PX,
    frame_size: tuple[int, int] | None = None,
) -> dict[int, GroundTruth]:
    """Read a JSON-lines annotation file into {frame_index: GroundTruth}.

    ``frame_size`` is (width, height); when given, boxes must lie inside it.
    """
    out: dict[int, GroundTruth] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            gt = parse_annotation(record, min_box_px, frame_size)
            out[gt.frame_index] = gt
    return out


def write_annotations(path: str | os.PathLike, truth: Mapping[int, GroundTruth] | Iterable[GroundTruth]) -> None:
    items = truth.values() if isinstance(truth, Mapping) else truth
    with open(path, "w") as fh:
        for gt in sorted(items, key=lambda g: g.frame_index):
            fh.write(json.dumps(gt.to_record(), sort_keys=True) + "\n")
