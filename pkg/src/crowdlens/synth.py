"""Deterministic synthetic crowd scenes with exact ground truth.

Agents are pairs of filled ellipses (striped body plus head) whose size
grows linearly with the row of their feet, drawn back to front over a
static textured background with Gaussian sensor noise.  Every random draw
is derived from the scenario seed, so a spec reproduces byte-identical
frames and truth.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import cv2
import numpy as np

from .core import (
    DEFAULT_MIN_BOX_PX,
    DetectionBox,
    Frame,
    GroundTruth,
    Roi,
    ValidationError,
    read_kv_file,
    write_annotations,
    write_frame_sequence,
    write_kv_file,
    write_pgm,
)

SCENARIOS = ("sparse_walk", "dense_crowd", "laminar_flow", "fight", "dance")
MAX_AGENTS = {"sparse_walk": 10, "dense_crowd": 75, "laminar_flow": 75, "fight": 40, "dance": 40}

BOX_ASPECT = 0.5  # box width / box height

# Thresholds a fight scene's own truth must exceed (see fight_statistics).
FIGHT_MIN_APPROACH_RATE = 0.3  # px/frame, mean positive closing speed between agents
FIGHT_MIN_DIRECTION_CHANGES = 1.0  # direction flips (> 45 deg) per agent per second


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str = "sparse_walk"
    n_agents: int = 5
    duration_s: float = 4.0
    fps: float = 25.0
    seed: int = 0
    width: int = 704
    height: int = 576
    agent_height_top: float = 0.0  # 0 -> 0.12 * height
    agent_height_bottom: float = 0.0  # 0 -> 0.24 * height
    onset_s: float = 0.0
    noise_sigma: float = 4.0
    flow_angle_deg: float = 0.0
    gate_axis: tuple = (0.0, 1.0)
    min_box_px: int = DEFAULT_MIN_BOX_PX

    def __post_init__(self):
        if not self.agent_height_top:
            object.__setattr__(self, "agent_height_top", 0.12 * self.height)
        if not self.agent_height_bottom:
            object.__setattr__(self, "agent_height_bottom", 0.24 * self.height)
        object.__setattr__(self, "gate_axis", tuple(float(v) for v in self.gate_axis))

    @property
    def n_frames(self) -> int:
        return int(round(self.duration_s * self.fps))

    @property
    def onset_frame(self) -> int | None:
        if self.scenario != "fight":
            return None
        return int(round(self.onset_s * self.fps))

    def agent_height(self, foot_y):
        return self.agent_height_top + (self.agent_height_bottom - self.agent_height_top) * (
            np.asarray(foot_y, dtype=np.float64) / (self.height - 1)
        )

    def foot_range(self) -> tuple[float, float]:
        k = (self.agent_height_bottom - self.agent_height_top) / (self.height - 1)
        lo = math.ceil(self.agent_height_top / (1.0 - k)) + 1.0
        return lo, float(self.height - 1)

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ValidationError(f"scenario: unknown scenario {self.scenario!r}")
        if self.n_agents < 0 or self.n_agents > MAX_AGENTS[self.scenario]:
            raise ValidationError(
                f"n_agents: {self.n_agents} outside [0, {MAX_AGENTS[self.scenario]}] for {self.scenario}"
            )
        if self.scenario == "fight" and self.n_agents == 1:
            raise ValidationError("n_agents: a fight needs at least two agents")
        if self.width < 64 or self.height < 64:
            raise ValidationError("width/height: frames must be at least 64x64")
        if self.fps <= 0:
            raise ValidationError("fps: must be positive")
        if self.duration_s <= 0:
            raise ValidationError("duration_s: must be positive")
        if not 0 < self.agent_height_top <= self.agent_height_bottom < self.height:
            raise ValidationError("agent_height_top/agent_height_bottom: need 0 < top <= bottom < height")
        if round(BOX_ASPECT * self.agent_height_top) < self.min_box_px:
            raise ValidationError(
                f"agent_height_top: boxes would be narrower than min_box_px={self.min_box_px}"
            )
        if self.onset_s < 0 or (self.scenario == "fight" and self.onset_s >= self.duration_s):
            raise ValidationError("onset_s: must lie inside the clip")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma: must be non-negative")
        if math.hypot(*self.gate_axis) == 0:
            raise ValidationError("gate_axis: must be non-zero")
        lo, hi = self.foot_range()
        if lo >= hi:
            raise ValidationError("agent_height_bottom: agents do not fit in the frame")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gate_axis"] = list(self.gate_axis)
        return d

    @classmethod
    def from_dict(cls, values: dict) -> "ScenarioSpec":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(values) - allowed
        if unknown:
            raise ValidationError(f"{sorted(unknown)[0]}: unknown scenario field")
        kwargs = dict(values)
        try:
            for key in ("n_agents", "seed", "width", "height", "min_box_px"):
                if key in kwargs:
                    v = kwargs[key]
                    if isinstance(v, bool) or not float(v).is_integer():
                        raise ValidationError(f"{key}: expected an integer, got {v!r}")
                    kwargs[key] = int(v)
            for key in ("duration_s", "fps", "agent_height_top", "agent_height_bottom", "onset_s",
                        "noise_sigma", "flow_angle_deg"):
                if key in kwargs:
                    kwargs[key] = float(kwargs[key])
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{key}: {exc}") from exc
        if "scenario" in kwargs and not isinstance(kwargs["scenario"], str):
            raise ValidationError("scenario: expected a name")
        spec = cls(**kwargs)
        spec.validate()
        return spec

    @classmethod
    def load(cls, path) -> "ScenarioSpec":
        return cls.from_dict(read_kv_file(path))

    def save(self, path) -> None:
        write_kv_file(path, self.to_dict())


@dataclass
class SceneTruth:
    """Per-frame ground truth plus per-agent state.

    ``agents[t]`` is an (n, 6) array of (id, center_x, foot_y, height, vx, vy)
    where (vx, vy) is the displacement from frame t-1 to t.
    """

    frames: list[GroundTruth]
    agents: list[np.ndarray]
    onset: int | None

    def counts(self) -> np.ndarray:
        return np.array([gt.count for gt in self.frames])

    def velocities(self, t: int) -> np.ndarray:
        return self.agents[t][:, 4:6]


def agent_box(cx: float, foot: float, h: float) -> tuple[int, int, int, int]:
    w = BOX_ASPECT * h
    x0 = int(round(cx - w / 2.0))
    y0 = int(round(foot - h))
    return x0, y0, int(round(w)), int(round(h))


# ---------------------------------------------------------------------------
# motion models


def _unit(angle):
    return np.stack([np.cos(angle), np.sin(angle)], axis=-1)


class _Sim:
    def __init__(self, spec: ScenarioSpec):
        self.spec = spec
        self.rng = np.random.default_rng([spec.seed, 1])
        self.next_id = 0
        self.foot_lo, self.foot_hi = spec.foot_range()

    def new_ids(self, n):
        ids = np.arange(self.next_id, self.next_id + n)
        self.next_id += n
        return ids

    def x_bounds(self, foot):
        half = 0.5 * BOX_ASPECT * self.spec.agent_height(foot) + 1.0
        return half, self.spec.width - 1.0 - half

    def random_positions(self, n, foot_lo=None, foot_hi=None, x_frac=(0.0, 1.0)):
        lo = self.foot_lo if foot_lo is None else foot_lo
        hi = self.foot_hi if foot_hi is None else foot_hi
        foot = self.rng.uniform(lo, hi, n)
        xl, xh = self.x_bounds(foot)
        span = xh - xl
        x = xl + span * self.rng.uniform(x_frac[0], x_frac[1], n)
        return np.stack([x, foot], axis=1)

    def clamp(self, pos):
        pos[:, 1] = np.clip(pos[:, 1], self.foot_lo, self.foot_hi)
        xl, xh = self.x_bounds(pos[:, 1])
        pos[:, 0] = np.clip(pos[:, 0], xl, xh)
        return pos

    def reflect(self, pos, vel):
        """Bounce velocities of agents touching the walkable region's border."""
        xl, xh = self.x_bounds(pos[:, 1])
        vel[:, 0] = np.where((pos[:, 0] <= xl) & (vel[:, 0] < 0), -vel[:, 0], vel[:, 0])
        vel[:, 0] = np.where((pos[:, 0] >= xh) & (vel[:, 0] > 0), -vel[:, 0], vel[:, 0])
        vel[:, 1] = np.where((pos[:, 1] <= self.foot_lo) & (vel[:, 1] < 0), -vel[:, 1], vel[:, 1])
        vel[:, 1] = np.where((pos[:, 1] >= self.foot_hi) & (vel[:, 1] > 0), -vel[:, 1], vel[:, 1])
        return vel


def _simulate(spec: ScenarioSpec):
    """Return per-frame (ids, positions) plus exit events (frame, incoming?)."""
    sim = _Sim(spec)
    rng = sim.rng
    n, T = spec.n_agents, spec.n_frames
    ids_per_frame, pos_per_frame = [], []
    exits: list[tuple[int, bool]] = []
    axis = np.asarray(spec.gate_axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)

    if n == 0:
        empty = np.zeros((0, 2))
        return [np.zeros(0, dtype=int)] * T, [empty] * T, exits

    ids = sim.new_ids(n)
    s = spec.scenario
    if s == "sparse_walk":
        pos = sim.random_positions(n)
        sign = rng.choice([-1.0, 1.0], n)
        speed = rng.uniform(1.5, 3.0, n)
        lateral = rng.normal(0.0, 0.15, n)
        for t in range(T):
            if t > 0:
                perp = np.array([-axis[1], axis[0]])
                vel = (sign * speed)[:, None] * axis + lateral[:, None] * perp
                pos = pos + vel + rng.normal(0.0, 0.1, (n, 2))
                xl, xh = sim.x_bounds(pos[:, 1])
                gone = (pos[:, 1] < sim.foot_lo) | (pos[:, 1] > sim.foot_hi) | (pos[:, 0] < xl) | (
                    pos[:, 0] > xh
                )
                for i in np.flatnonzero(gone):
                    exits.append((t, bool(sign[i] * 1.0 >= 0)))
                    sign[i] = rng.choice([-1.0, 1.0])
                    speed[i] = rng.uniform(1.5, 3.0)
                    lateral[i] = rng.normal(0.0, 0.15)
                    ids[i] = sim.new_ids(1)[0]
                    p = sim.random_positions(1)[0]
                    # re-enter from the side the walker comes from
                    entry = -sign[i] * axis
                    if abs(entry[1]) >= abs(entry[0]):
                        p[1] = sim.foot_lo + 1 if entry[1] < 0 else sim.foot_hi - 1
                    else:
                        xl1, xh1 = sim.x_bounds(np.array([p[1]]))
                        p[0] = xl1[0] + 1 if entry[0] < 0 else xh1[0] - 1
                    pos[i] = p
                pos = sim.clamp(pos)
            ids_per_frame.append(ids.copy())
            pos_per_frame.append(pos.copy())
    elif s == "dense_crowd":
        pos = sim.random_positions(n)
        vel = rng.normal(0.0, 0.6, (n, 2))
        for t in range(T):
            if t > 0:
                vel = 0.9 * vel + rng.normal(0.0, 0.25, (n, 2))
                spd = np.linalg.norm(vel, axis=1, keepdims=True)
                vel = np.where(spd > 1.5, vel * 1.5 / np.maximum(spd, 1e-9), vel)
                vel = sim.reflect(pos, vel)
                pos = sim.clamp(pos + vel)
            ids_per_frame.append(ids.copy())
            pos_per_frame.append(pos.copy())
    elif s == "laminar_flow":
        pos = sim.random_positions(n)
        direction = _unit(np.deg2rad(spec.flow_angle_deg))
        speed = rng.uniform(1.8, 2.4, n)
        for t in range(T):
            if t > 0:
                pos = pos + speed[:, None] * direction + rng.normal(0.0, 0.05, (n, 2))
                xl, xh = sim.x_bounds(pos[:, 1])
                gone = (pos[:, 0] > xh) | (pos[:, 0] < xl) | (pos[:, 1] < sim.foot_lo) | (
                    pos[:, 1] > sim.foot_hi
                )
                for i in np.flatnonzero(gone):
                    exits.append((t, bool(direction @ axis >= 0)))
                    ids[i] = sim.new_ids(1)[0]
                    p = sim.random_positions(1)[0]
                    if abs(direction[0]) >= abs(direction[1]):
                        xl1, xh1 = sim.x_bounds(np.array([p[1]]))
                        p[0] = xl1[0] + 1 if direction[0] > 0 else xh1[0] - 1
                    else:
                        p[1] = sim.foot_lo + 1 if direction[1] > 0 else sim.foot_hi - 1
                    pos[i] = p
                pos = sim.clamp(pos)
            ids_per_frame.append(ids.copy())
            pos_per_frame.append(pos.copy())
    elif s == "dance":
        anchors = sim.random_positions(n, x_frac=(0.1, 0.9))
        amp = np.array([0.05 * spec.width, 0.015 * spec.height])
        freq = 1.2  # Hz
        phase = rng.uniform(0, 2 * np.pi)
        for t in range(T):
            ph = 2 * np.pi * freq * t / spec.fps + phase
            offset = np.array([amp[0] * np.sin(ph), amp[1] * np.sin(2 * ph)])
            pos = sim.clamp(anchors + offset)
            ids_per_frame.append(ids.copy())
            pos_per_frame.append(pos.copy())
    elif s == "fight":
        onset = spec.onset_frame
        half = n // 2
        group = np.array([0] * half + [1] * (n - half))
        pos = np.concatenate(
            [
                sim.random_positions(half, x_frac=(0.0, 0.3)),
                sim.random_positions(n - half, x_frac=(0.7, 1.0)),
            ]
        )
        # keep both groups in a common band of rows so they can meet
        band = sim.foot_lo + (sim.foot_hi - sim.foot_lo) * np.array([0.35, 0.85])
        pos[:, 1] = rng.uniform(band[0], band[1], n)
        pos = sim.clamp(pos)
        vel = rng.normal(0.0, 0.3, (n, 2))
        countdown = np.zeros(n, dtype=int)
        for t in range(T):
            if t > 0:
                if t < onset:
                    vel = 0.8 * vel + rng.normal(0.0, 0.1, (n, 2))
                    vel = np.clip(vel, -0.5, 0.5)
                else:
                    countdown -= 1
                    for i in np.flatnonzero(countdown <= 0):
                        opp = np.flatnonzero(group != group[i])
                        d = pos[opp] - pos[i]
                        dist = np.linalg.norm(d, axis=1)
                        j = opp[np.argmin(dist)]
                        to = pos[j] - pos[i]
                        ang = math.atan2(to[1], to[0])
                        if dist.min() < 0.1 * spec.width:
                            # close combat: lunges, dodges and retreats
                            ang += rng.choice([0.0, np.pi]) + rng.uniform(-1.2, 1.2)
                        else:
                            ang += rng.uniform(-0.4, 0.4)
                        speed = rng.uniform(3.0, 5.0)
                        vel[i] = speed * np.array([math.cos(ang), math.sin(ang)])
                        countdown[i] = rng.integers(4, int(0.5 * spec.fps) + 1)
                vel = sim.reflect(pos, vel)
                pos = sim.clamp(pos + vel)
            ids_per_frame.append(ids.copy())
            pos_per_frame.append(pos.copy())
    return ids_per_frame, pos_per_frame, exits


# ---------------------------------------------------------------------------
# rendering


def _background(spec: ScenarioSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 2])
    H, W = spec.height, spec.width
    coarse = rng.uniform(100.0, 145.0, (max(2, H // 48), max(2, W // 48))).astype(np.float32)
    bg = cv2.resize(coarse, (W, H), interpolation=cv2.INTER_CUBIC)
    fine = rng.normal(0.0, 3.0, (max(2, H // 4), max(2, W // 4))).astype(np.float32)
    bg += cv2.resize(fine, (W, H), interpolation=cv2.INTER_LINEAR)
    # a few static floor markings so the background has real edges
    for _ in range(4):
        y = int(rng.integers(0, H))
        bg[y : y + 2, :] += rng.choice([-18.0, 18.0])
    for _ in range(3):
        x = int(rng.integers(0, W))
        bg[:, x : x + 2] += rng.choice([-18.0, 18.0])
    return np.clip(bg, 90.0, 160.0)


def _agent_look(spec: ScenarioSpec, agent_id: int) -> tuple[float, float, float, float, float]:
    rng = np.random.default_rng([spec.seed, 3, int(agent_id)])
    dark = rng.random() < 0.5
    body = rng.uniform(25.0, 65.0) if dark else rng.uniform(190.0, 235.0)
    legs = rng.uniform(25.0, 65.0) if rng.random() < 0.5 else rng.uniform(190.0, 235.0)
    head = rng.uniform(30.0, 70.0) if not dark else rng.uniform(185.0, 225.0)
    stripe = rng.uniform(5.0, 9.0)  # stripes per body height
    phase = rng.uniform(0.0, 2 * np.pi)
    return body, legs, head, stripe, phase


def _draw_agent(canvas, mask, cx, foot, h, look):
    """Paint one agent into ``canvas`` (float) and/or ``mask`` (bool)."""
    H, W = (canvas if canvas is not None else mask).shape
    w = BOX_ASPECT * h
    x0 = max(0, int(math.floor(cx - w / 2)))
    x1 = min(W, int(math.ceil(cx + w / 2)) + 1)
    y0 = max(0, int(math.floor(foot - h)))
    y1 = min(H, int(math.ceil(foot)) + 1)
    if x1 <= x0 or y1 <= y0:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1].astype(np.float32)
    # body: ellipse over the lower 80 %; head: ellipse in the top 20 %
    bcy, bry, brx = foot - 0.40 * h, 0.40 * h, 0.19 * h
    hcy, hry, hrx = foot - 0.895 * h, 0.10 * h, 0.08 * h
    body = ((xx - cx) / brx) ** 2 + ((yy - bcy) / bry) ** 2 <= 1.0
    head = ((xx - cx) / hrx) ** 2 + ((yy - hcy) / hry) ** 2 <= 1.0
    if mask is not None:
        mask[y0:y1, x0:x1] |= body | head
    if canvas is None:
        return
    body_c, legs_c, head_c, stripes, phase = look
    region = canvas[y0:y1, x0:x1]
    rel = (yy - (foot - 0.8 * h)) / (0.8 * h)
    torso = rel < 0.55
    stripe = np.where(np.sin(2 * np.pi * stripes * rel + phase) > 0, 10.0, -10.0)
    colour = np.where(torso, body_c + stripe, legs_c)
    region[body] = colour[body]
    region[head] = head_c


class Scene:
    """A generated scenario: lazily rendered frames plus precomputed truth."""

    def __init__(self, spec: ScenarioSpec):
        spec.validate()
        self.spec = spec
        ids, positions, exits = _simulate(spec)
        self._ids = ids
        self._pos = positions
        self.background_float = _background(spec)
        self.background = np.round(self.background_float).astype(np.uint8)
        self.truth = self._build_truth(exits)
        self._looks: dict[int, tuple] = {}

    def _build_truth(self, exits) -> SceneTruth:
        spec = self.spec
        onset = spec.onset_frame
        exit_in = np.zeros(spec.n_frames, dtype=int)
        exit_out = np.zeros(spec.n_frames, dtype=int)
        for t, incoming in exits:
            (exit_in if incoming else exit_out)[t] += 1
        frames, agents = [], []
        prev: dict[int, np.ndarray] = {}
        for t in range(spec.n_frames):
            ids, pos = self._ids[t], self._pos[t]
            h = spec.agent_height(pos[:, 1]) if len(pos) else np.zeros(0)
            vel = np.zeros((len(ids), 2))
            for k, i in enumerate(ids):
                if int(i) in prev:
                    vel[k] = pos[k] - prev[int(i)]
            prev = {int(i): pos[k] for k, i in enumerate(ids)}
            agents.append(np.column_stack([ids, pos, h, vel]) if len(ids) else np.zeros((0, 6)))
            boxes = []
            for k in range(len(ids)):
                x, y, w, hh = agent_box(pos[k, 0], pos[k, 1], h[k])
                x = min(max(x, 0), spec.width - w)
                y = min(max(y, 0), spec.height - hh)
                boxes.append(DetectionBox(Roi(x, y, w, hh), "full_body", 1.0))
            incident = onset is not None and t >= onset
            frames.append(
                GroundTruth(t, len(ids), tuple(boxes), incident, int(exit_in[t]), int(exit_out[t]))
            )
        return SceneTruth(frames, agents, onset)

    def __len__(self) -> int:
        return self.spec.n_frames

    def _look(self, agent_id: int):
        if agent_id not in self._looks:
            self._looks[agent_id] = _agent_look(self.spec, agent_id)
        return self._looks[agent_id]

    def _order(self, t):
        return np.argsort(self._pos[t][:, 1], kind="stable") if len(self._pos[t]) else []

    def render(self, t: int) -> np.ndarray:
        spec = self.spec
        canvas = self.background_float.copy()
        ids, pos = self._ids[t], self._pos[t]
        for k in self._order(t):  # far (small foot_y) first
            h = float(spec.agent_height(pos[k, 1]))
            _draw_agent(canvas, None, pos[k, 0], pos[k, 1], h, self._look(int(ids[k])))
        if spec.noise_sigma > 0:
            rng = np.random.default_rng([spec.seed, 4, t])
            canvas += spec.noise_sigma * rng.standard_normal(canvas.shape, dtype=np.float32)
        return np.clip(np.round(canvas), 0, 255).astype(np.uint8)

    def frame(self, t: int) -> Frame:
        return Frame(self.render(t), index=t, timestamp_ms=t * 1000.0 / self.spec.fps)

    def frames(self) -> Iterator[Frame]:
        for t in range(len(self)):
            yield self.frame(t)

    def silhouette(self, t: int) -> np.ndarray:
        mask = np.zeros((self.spec.height, self.spec.width), dtype=bool)
        ids, pos = self._ids[t], self._pos[t]
        for k in range(len(ids)):
            h = float(self.spec.agent_height(pos[k, 1]))
            _draw_agent(None, mask, pos[k, 0], pos[k, 1], h, None)
        return mask

    def write(self, out_dir: str | os.PathLike) -> Path:
        """Write frames, truth.jsonl, background.pgm and scene.kv to ``out_dir``."""
        out = Path(out_dir)
        write_frame_sequence(out / "frames", self.frames())
        write_annotations(out / "truth.jsonl", self.truth.frames)
        write_pgm(out / "background.pgm", self.background)
        self.spec.save(out / "scene.kv")
        return out


def generate(spec: ScenarioSpec) -> Scene:
    return Scene(spec)


# ---------------------------------------------------------------------------
# truth-derived statistics


def fight_statistics(truth: SceneTruth, fps: float, start: int = 0) -> dict:
    """Mean positive closing speed over agent pairs and direction flips per agent-second."""
    approach, flips, agent_frames = [], 0, 0
    prev_dir: dict[int, np.ndarray] = {}
    for t in range(max(start, 1), len(truth.agents)):
        a, b = truth.agents[t - 1], truth.agents[t]
        if len(b) >= 2 and len(a) == len(b) and np.array_equal(a[:, 0], b[:, 0]):
            d0 = np.linalg.norm(a[:, None, 1:3] - a[None, :, 1:3], axis=-1)
            d1 = np.linalg.norm(b[:, None, 1:3] - b[None, :, 1:3], axis=-1)
            iu = np.triu_indices(len(b), 1)
            approach.append(np.maximum(0.0, d0 - d1)[iu].mean())
        for row in b:
            v = row[4:6]
            sp = np.hypot(*v)
            agent_frames += 1
            if sp < 0.5:
                continue
            u = v / sp
            key = int(row[0])
            if key in prev_dir and float(u @ prev_dir[key]) < math.cos(math.radians(45)):
                flips += 1
            prev_dir[key] = u
    seconds = agent_frames / fps if agent_frames else 1.0
    return {
        "approach_rate": float(np.mean(approach)) if approach else 0.0,
        "direction_changes_per_s": flips / seconds,
    }


def synthetic_trajectories(
    n: int,
    noise: float = 0.1,
    seed: int = 0,
    gate_axis=(0.0, 1.0),
    n_points: int = 20,
    spread_deg: float = 60.0,
) -> list[tuple[np.ndarray, bool]]:
    """Labelled (points, incoming) pairs; points are (frame, x, y) rows.

    Each walker heads within ``spread_deg`` of +axis (incoming) or -axis
    (outgoing); every step is perturbed by isotropic noise of ``noise``
    times the step length.
    """
    rng = np.random.default_rng([seed, 5])
    axis = np.asarray(gate_axis, dtype=np.float64)
    axis /= np.linalg.norm(axis)
    base = math.atan2(axis[1], axis[0])
    out = []
    for k in range(n):
        incoming = bool(k % 2 == 0)
        ang = base + (0.0 if incoming else math.pi) + math.radians(rng.uniform(-spread_deg, spread_deg))
        speed = rng.uniform(1.5, 3.5)
        step = speed * np.array([math.cos(ang), math.sin(ang)])
        steps = step + noise * speed * rng.standard_normal((n_points - 1, 2))
        start = rng.uniform(100, 500, 2)
        xy = np.vstack([start, start + np.cumsum(steps, axis=0)])
        frames = np.arange(n_points, dtype=np.float64) + rng.integers(0, 1000)
        out.append((np.column_stack([frames, xy]), incoming))
    return out


# ---------------------------------------------------------------------------
# incident clip suites

INCIDENT_KINDS = ("fight", "dance", "laminar_flow")


def incident_clip_spec(kind: str, seed: int, duration_s: float = 10.0, width: int = 352,
                       height: int = 288, fps: float = 25.0) -> ScenarioSpec:
    """A small-frame incident clip; agent count, fight onset and flow
    direction are drawn from ``seed``."""
    rng = np.random.default_rng([seed, 6])
    kw = dict(scenario=kind, n_agents=int(rng.integers(8, 31)), seed=seed, duration_s=duration_s,
              fps=fps, width=width, height=height, min_box_px=max(1, int(0.04 * height)))
    if kind == "fight":
        kw["onset_s"] = float(rng.uniform(0.2, 0.4) * duration_s)
    if kind == "laminar_flow":
        kw["flow_angle_deg"] = float(rng.uniform(0.0, 360.0))
    return ScenarioSpec(**kw)


def incident_suite(n_per_kind: int, seed: int = 0, **kwargs) -> list[ScenarioSpec]:
    """Interleaved fight / dance / laminar specs with distinct seeds."""
    specs = []
    for i in range(n_per_kind):
        for k, kind in enumerate(INCIDENT_KINDS):
            specs.append(incident_clip_spec(kind, seed * 100003 + 3 * i + k, **kwargs))
    return specs
