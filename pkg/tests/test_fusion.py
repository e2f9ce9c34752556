from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import scene
from crowdlens.core import DetectionBox, PerspectiveMap, Roi
from crowdlens.detector import count_by_detection, detect
from crowdlens.fusion import CountingPipeline, FusedEstimate, fuse_count, regression_masks
from crowdlens.regression import (
    N_FEATURES,
    LinearCountModel,
    block_sums,
    estimate_count_regression,
    extract_block_features,
)
from crowdlens.segmentation import BackgroundModel

H, W = 96, 128


def masks(seed, p=0.3):
    rng = np.random.default_rng(seed)
    fg = rng.random((H, W)) < p
    return fg, fg & (rng.random((H, W)) < 0.5)


boxes_st = st.lists(
    st.tuples(st.integers(0, W - 8), st.integers(0, H - 8), st.integers(4, 40), st.integers(4, 60)),
    max_size=6,
).map(lambda rs: [DetectionBox(Roi(x, y, min(w, W - x), min(h, H - y))) for x, y, w, h in rs])


def test_empty_scene():
    fg = np.zeros((H, W), bool)
    model = LinearCountModel(np.ones(N_FEATURES), 0.0)
    est = fuse_count(np.zeros((H, W), np.uint8), fg, fg, [], model)
    assert est.detected == 0 and est.regressed_residual == 0.0 and est.total == 0.0


def test_record_fields():
    est = FusedEstimate(3, 1.25, (DetectionBox(Roi(0, 0, 10, 20)),), 7)
    assert est.to_record() == {"frame": 7, "detected": 3, "regressed_residual": 1.25, "total": 4.25, "n_boxes": 1}


@given(boxes_st, st.integers(0, 1000))
def test_zero_regressor_is_detection_count(boxes, seed):
    fg, edges = masks(seed)
    est = fuse_count(None, fg, edges, [], LinearCountModel.zero(), boxes=boxes)
    assert est.total == count_by_detection(boxes)


@given(st.integers(0, 1000), st.floats(0.5, 4), st.floats(0.5, 4))
def test_empty_detector_is_plain_regression(seed, top, bottom):
    fg, edges = masks(seed)
    pmap = PerspectiveMap(top, bottom)
    model = LinearCountModel(np.random.default_rng(seed).normal(5, 3, N_FEATURES), 0.5)
    est = fuse_count(np.zeros((H, W), np.uint8), fg, edges, [], model, pmap)
    plain = estimate_count_regression(model, extract_block_features(fg, edges, pmap))
    assert est.detected == 0 and est.total == plain


@given(boxes_st, st.integers(0, 1000), st.floats(-1.0, 1.0))
def test_total_at_least_detected(boxes, seed, bias):
    fg, edges = masks(seed)
    model = LinearCountModel(np.random.default_rng(seed).normal(0, 20, N_FEATURES), bias)
    est = fuse_count(None, fg, edges, [], model, boxes=boxes)
    assert est.total >= est.detected
    assert est.total == est.detected + est.regressed_residual


@given(boxes_st, boxes_st, st.integers(0, 1000))
def test_more_box_area_never_raises_numerators(boxes, extra, seed):
    fg, edges = masks(seed)
    pmap = PerspectiveMap(3.0, 1.0)
    a = block_sums(fg, edges, pmap, [b.roi for b in boxes])
    b = block_sums(fg, edges, pmap, [b.roi for b in boxes + extra])
    assert np.all(b[0] <= a[0] + 1e-12) and np.all(b[1] <= a[1] + 1e-12)


def test_sparse_scene_inherits_detection(full_body_model):
    sc = scene("sparse_walk", 6, 900, 3.0)
    truth = sc.truth.counts()
    bg = BackgroundModel(initial=sc.background)
    ok = 0
    for t in range(len(sc)):
        img = sc.render(t)
        fg, edges = regression_masks(img, bg.update_and_segment(img))
        est = fuse_count(img, fg, edges, [full_body_model], LinearCountModel.zero())
        ok += abs(est.total - truth[t]) <= 5
    assert ok / len(sc) >= 0.9


def test_pipeline_matches_fuse_count(full_body_model):
    sc = scene("sparse_walk", 4, 901, 0.5)
    model = LinearCountModel(np.full(N_FEATURES, 2.0), 0.1)
    pipe = CountingPipeline([full_body_model], model, background=sc.background)
    bg = BackgroundModel(initial=sc.background)
    for t in range(len(sc)):
        img = sc.render(t)
        fg, edges = regression_masks(img, bg.update_and_segment(img))
        boxes = detect(img, [full_body_model])
        ref = fuse_count(img, fg, edges, [full_body_model], model, boxes=boxes, frame_index=t)
        assert pipe.process(img, t) == ref
    assert pipe.frames == len(sc) and pipe.fps > 0
