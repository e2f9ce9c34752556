from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crowdlens.core import (
    DetectionBox,
    FormatError,
    Frame,
    GroundTruth,
    PerspectiveMap,
    Roi,
    StreamConfig,
    StreamError,
    ValidationError,
    incident_onset,
    load_annotations,
    load_frame_sequence,
    parse_kv,
    perspective_weight,
    read_pgm,
    write_annotations,
    write_frame_sequence,
    write_pgm,
)


def test_three_frames_timestamps(tmp_path, rng):
    imgs = [rng.integers(0, 256, (576, 704), dtype=np.uint8) for _ in range(3)]
    write_frame_sequence(tmp_path, imgs)
    frames = list(load_frame_sequence(tmp_path, fps=25))
    assert [f.timestamp_ms for f in frames] == [0.0, 40.0, 80.0]
    assert [f.index for f in frames] == [0, 1, 2]
    for f, img in zip(frames, imgs):
        assert (f.width, f.height) == (704, 576)
        assert np.array_equal(f.pixels, img)


def test_empty_directory_is_empty_stream(tmp_path):
    assert list(load_frame_sequence(tmp_path)) == []


def test_sixteen_bit_pgm_rejected(tmp_path):
    p = tmp_path / "frame_000000.pgm"
    p.write_bytes(b"P5\n64 64\n65535\n" + bytes(64 * 64 * 2))
    with pytest.raises(FormatError):
        read_pgm(p)
    with pytest.raises(FormatError):
        list(load_frame_sequence(tmp_path))


def test_list_file_and_size_mismatch(tmp_path, rng):
    write_pgm(tmp_path / "a.pgm", rng.integers(0, 256, (64, 80), dtype=np.uint8))
    write_pgm(tmp_path / "b.pgm", rng.integers(0, 256, (64, 96), dtype=np.uint8))
    (tmp_path / "list.txt").write_text("a.pgm\n# comment\nb.pgm\n")
    it = load_frame_sequence(tmp_path / "list.txt")
    assert next(it).width == 80
    with pytest.raises(StreamError):
        next(it)


def test_frame_stream_deterministic(tmp_path, rng):
    write_frame_sequence(tmp_path, [rng.integers(0, 256, (64, 64), dtype=np.uint8) for _ in range(4)])
    a = [f.pixels.tobytes() for f in load_frame_sequence(tmp_path)]
    b = [f.pixels.tobytes() for f in load_frame_sequence(tmp_path)]
    assert a == b


def test_frame_minimum_size():
    with pytest.raises(ValueError):
        Frame(np.zeros((63, 64), dtype=np.uint8))
    Frame(np.zeros((64, 64), dtype=np.uint8))


def _write_records(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))


def test_annotation_single_box(tmp_path):
    p = tmp_path / "t.jsonl"
    _write_records(p, [{"frame": 0, "boxes": [{"x": 10, "y": 10, "w": 40, "h": 90, "class": "full_body"}]}])
    gt = load_annotations(p)[0]
    assert gt.count == 1
    assert gt.boxes[0].roi == Roi(10, 10, 40, 90)


def test_annotation_thirty_pixel_head_accepted(tmp_path):
    p = tmp_path / "t.jsonl"
    _write_records(p, [{"frame": 3, "boxes": [{"x": 0, "y": 0, "w": 30, "h": 30, "class": "head"}]}])
    assert load_annotations(p)[3].boxes[0].cls == "head"


def test_annotation_small_box_rejected(tmp_path):
    p = tmp_path / "t.jsonl"
    _write_records(p, [{"frame": 0, "boxes": [{"x": 0, "y": 0, "w": 20, "h": 60}]}])
    with pytest.raises(ValidationError):
        load_annotations(p)


def test_annotation_count_mismatch_and_bad_json(tmp_path):
    p = tmp_path / "t.jsonl"
    _write_records(p, [{"frame": 0, "count": 2, "boxes": [{"x": 0, "y": 0, "w": 40, "h": 90}]}])
    with pytest.raises(ValidationError):
        load_annotations(p)
    p.write_text("{not json\n")
    with pytest.raises(FormatError):
        load_annotations(p)


def test_incident_onset():
    truth = {i: GroundTruth(i, incident=i >= 7) for i in range(12)}
    assert incident_onset(truth) == 7
    assert incident_onset({0: GroundTruth(0)}) is None


def test_perspective_examples():
    assert perspective_weight(PerspectiveMap(1, 1), 123, 576) == 1.0
    assert perspective_weight(PerspectiveMap(4, 1), 0, 576) == 4.0
    # direct evaluation of the linear ramp
    assert perspective_weight(PerspectiveMap(4, 1), 287, 576) == pytest.approx(4 + (1 - 4) * 287 / 575, abs=1e-15)
    assert perspective_weight(PerspectiveMap(4, 1), 575, 576) == 1.0


@given(st.floats(0.05, 20), st.floats(0.05, 20), st.integers(2, 2000))
def test_perspective_monotone_and_exact_endpoints(top, bottom, height):
    pm = PerspectiveMap(top, bottom)
    w = pm.row_weights(height)
    d = np.diff(w)
    assert np.all(d <= 0) if top >= bottom else np.all(d >= 0)
    assert w[0] == top and w[-1] == pytest.approx(bottom, rel=1e-12)
    assert np.all(w > 0)


boxes_st = st.lists(
    st.tuples(st.integers(0, 300), st.integers(0, 200), st.integers(30, 120), st.integers(30, 200),
              st.sampled_from(["full_body", "head_shoulders", "head"])),
    max_size=5,
)


@given(st.lists(st.tuples(st.integers(0, 10_000), boxes_st, st.booleans()), max_size=6, unique_by=lambda r: r[0]))
def test_annotation_round_trip(tmp_path_factory, records):
    path = tmp_path_factory.mktemp("ann") / "t.jsonl"
    truth = {}
    for frame, boxes, incident in records:
        bs = tuple(DetectionBox(Roi(x, y, w, h), c) for x, y, w, h, c in boxes)
        truth[frame] = GroundTruth(frame, len(bs), bs, incident)
    write_annotations(path, truth)
    loaded = load_annotations(path)
    assert loaded == truth
    path2 = path.with_name("t2.jsonl")
    write_annotations(path2, loaded)
    assert path2.read_text() == path.read_text()


def test_stream_config_parsing():
    cfg = StreamConfig.from_mapping(parse_kv("fps = 30\nweight_top = 4\n# c\nmin_box_px = 12\ngate_axis = [1, 0]\nfoo = bar"))
    assert cfg.fps == 30.0 and cfg.min_box_px == 12
    assert cfg.perspective == PerspectiveMap(4, 1.0)
    assert cfg.gate_axis == (1.0, 0.0)
    assert cfg.extra == {"foo": "bar"}
    with pytest.raises(FormatError):
        parse_kv("no equals sign here")


def test_roi_iou():
    a, b = Roi(0, 0, 10, 10), Roi(5, 0, 10, 10)
    assert a.iou(b) == pytest.approx(50 / 150)
    assert a.iou(a) == 1.0
    with pytest.raises(ValidationError):
        Roi(0, 0, 0, 5)
