from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from crowdlens.core import FormatError, PerspectiveMap, Roi
from crowdlens.regression import (
    N_BLOCKS,
    N_FEATURES,
    RIDGE,
    BlockFeatures,
    CallableEmbeddings,
    ConfigurationError,
    LinearCountModel,
    SidecarEmbeddings,
    block_sums,
    embeddings_for,
    estimate_count_regression,
    estimate_count_svr,
    extract_block_features,
    read_embedding,
    register_embedding_provider,
    train_linear,
    train_svr,
    write_embedding,
)
from crowdlens.segmentation import BackgroundModel, edge_map

from conftest import scene


def brute_features(fg, edges, pmap, exclusions):
    """Pixel-by-pixel double loop in exact rational arithmetic."""
    H, W = fg.shape
    wt = [Fraction(pmap.weight_top) + (Fraction(pmap.weight_bottom) - Fraction(pmap.weight_top)) * Fraction(y, H - 1)
          for y in range(H)]
    out = []
    for k in range(N_BLOCKS):
        y0, y1 = k * H // N_BLOCKS, (k + 1) * H // N_BLOCKS
        nf = ne = Fraction(0)
        den = 0
        for y in range(y0, y1):
            for x in range(W):
                if any(r.x <= x < r.x + r.w and r.y <= y < r.y + r.h for r in exclusions):
                    continue
                den += 1
                if fg[y, x]:
                    nf += wt[y]
                if edges[y, x]:
                    ne += wt[y]
        out += [nf / den if den else Fraction(0), ne / den if den else Fraction(0)]
    return out


def test_full_mask_unit_ratios():
    fg = np.ones((96, 64), dtype=bool)
    f = extract_block_features(fg, np.zeros_like(fg))
    assert np.array_equal(f.foreground, np.ones(12))
    assert np.array_equal(f.edges, np.zeros(12))


def test_exclusion_of_top_half():
    fg = np.ones((96, 64), dtype=bool)
    f = extract_block_features(fg, fg, exclusions=[Roi(0, 0, 64, 48)])
    assert np.array_equal(f.foreground, [0.0] * 6 + [1.0] * 6)


def test_random_masks_match_pixel_loop_exactly():
    rng = np.random.default_rng(0)
    fg = rng.random((60, 50)) < 0.4
    ed = rng.random((60, 50)) < 0.2
    ex = [Roi(3, 4, 20, 17), Roi(30, 25, 15, 30)]
    f = extract_block_features(fg, ed, PerspectiveMap(), ex)
    assert f.values.tolist() == [float(v) for v in brute_features(fg, ed, PerspectiveMap(), ex)]


roi_st = st.builds(lambda x, y, w, h: Roi(x, y, w, h), st.integers(0, 20), st.integers(0, 20),
                   st.integers(1, 16), st.integers(1, 16))


@given(arrays(bool, (36, 36)), arrays(bool, (36, 36)), st.lists(roi_st, max_size=3),
       st.floats(0.25, 6), st.floats(0.25, 6))
def test_block_features_match_brute_force(fg, ed, ex, top, bottom):
    unit = extract_block_features(fg, ed, PerspectiveMap(), ex).values
    assert unit.tolist() == [float(v) for v in brute_features(fg, ed, PerspectiveMap(), ex)]
    pm = PerspectiveMap(top, bottom)
    got = extract_block_features(fg, ed, pm, ex).values
    want = np.array([float(v) for v in brute_features(fg, ed, pm, ex)])
    assert np.allclose(got, want, rtol=1e-12, atol=1e-15)
    assert np.all(got >= 0) and np.all(got <= pm.max_weight + 1e-12)


@given(arrays(bool, (36, 36)), arrays(bool, (36, 36)), st.lists(roi_st, max_size=3), roi_st,
       st.floats(0.25, 6), st.floats(0.25, 6))
def test_exclusion_never_raises_numerators(fg, ed, ex, extra, top, bottom):
    pm = PerspectiveMap(top, bottom)
    a_fg, a_ed, a_den = block_sums(fg, ed, pm, ex)
    b_fg, b_ed, b_den = block_sums(fg, ed, pm, ex + [extra])
    assert np.all(b_fg <= a_fg) and np.all(b_ed <= a_ed) and np.all(b_den <= a_den)


def test_zero_counts_zero_model():
    X = np.random.default_rng(1).random((40, N_FEATURES))
    m = train_linear(X, np.zeros(40))
    assert np.max(np.abs(m.weights)) <= 1e-9 and abs(m.bias) <= 1e-9


def test_exact_linear_recovery():
    rng = np.random.default_rng(2)
    X = rng.random((60, N_FEATURES))
    m = train_linear(X, 3 * X[:, 0] + 5)
    assert m.weights[0] == pytest.approx(3, abs=1e-6)
    assert m.bias == pytest.approx(5, abs=1e-6)
    assert np.max(np.abs(m.weights[1:])) <= 1e-6


def normal_equation_predictions(X, y, Xq, ridge=RIDGE):
    A = np.hstack([X, np.ones((len(X), 1))])
    R = ridge * np.eye(A.shape[1])
    R[-1, -1] = 0.0
    beta = np.linalg.solve(A.T @ A + R, A.T @ y)
    return np.hstack([Xq, np.ones((len(Xq), 1))]) @ beta


def test_ols_matches_normal_equations():
    rng = np.random.default_rng(3)
    X = rng.random((100, N_FEATURES))
    y = X @ rng.normal(0, 5, N_FEATURES) + rng.normal(0, 0.5, 100) + 7
    m = train_linear(X, y)
    Xq = rng.random((50, N_FEATURES))
    want = normal_equation_predictions(X, y, Xq)
    assert np.max(np.abs(m.raw(Xq) - want) / np.abs(want)) <= 1e-6


@given(st.integers(0, 10_000), st.floats(0.1, 50))
def test_target_scaling_equivariant(seed, c):
    rng = np.random.default_rng(seed)
    X = rng.random((40, N_FEATURES))
    y = rng.random(40) * 20
    Xq = rng.random((5, N_FEATURES))
    a = train_linear(X, y).raw(Xq)
    b = train_linear(X, c * y).raw(Xq)
    assert np.allclose(b, c * a, rtol=1e-9, atol=1e-9 * c)


@given(arrays(np.float64, N_FEATURES, elements=st.floats(-10, 10)),
       arrays(np.float64, N_FEATURES, elements=st.floats(-10, 10)), st.floats(-100, 100))
def test_estimates_non_negative(f, w, b):
    assert estimate_count_regression(LinearCountModel(w, b), f) >= 0.0


def test_clamp_and_zero():
    assert estimate_count_regression(LinearCountModel.zero(), np.zeros(N_FEATURES)) == 0.0
    assert estimate_count_regression(LinearCountModel(np.zeros(N_FEATURES), -5.0), np.zeros(N_FEATURES)) == 0.0


def test_model_file_round_trip(tmp_path):
    m = LinearCountModel(np.arange(N_FEATURES, dtype=float) / 7, 1.5)
    m.save(tmp_path / "r.json")
    m2 = LinearCountModel.load(tmp_path / "r.json")
    assert np.array_equal(m2.weights, m.weights) and m2.bias == m.bias


def test_training_rejects_too_few_rows():
    with pytest.raises(ValueError):
        train_linear(np.zeros((5, N_FEATURES)), np.zeros(5))


def _scene_features(sc, pmap):
    bg = BackgroundModel(initial=sc.background)
    rows = []
    for t in range(len(sc)):
        img = sc.render(t)
        fg = bg.update_and_segment(img)
        rows.append((extract_block_features(fg, edge_map(img) & fg, pmap).values, sc.truth.frames[t].count))
    return rows


def test_density_ramp_regression():
    pmap = PerspectiveMap(4.0, 1.0)
    ns = np.linspace(5, 75, 22).astype(int)
    train = []
    for i, n in enumerate(ns):
        kind = "sparse_walk" if n <= 10 else "dense_crowd"
        train += _scene_features(scene(kind, int(n), 900 + i, 1.0), pmap)
    model = train_linear([r[0] for r in train], [r[1] for r in train])
    rel = []
    for i, n in enumerate([40, 52, 60, 68, 75]):
        for f, truth in _scene_features(scene("dense_crowd", n, 950 + i, 1.0), pmap):
            rel.append(abs(estimate_count_regression(model, f) - truth) / truth)
    assert np.mean(rel) <= 0.25


def test_svr_two_point_interpolation():
    m = train_svr([[0.0], [1.0]], [0.0, 10.0], C=1e4, epsilon=0.0)
    assert estimate_count_svr(m, [0.5]) == pytest.approx(5.0, abs=0.1)


def test_svr_duplicates_equal_doubled_bound():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(12, 3))
    y = X @ [1.0, -2.0, 0.5] + 3 + rng.normal(0, 1.0, 12)
    dup = train_svr(np.vstack([X, X]), np.concatenate([y, y]), C=0.3, epsilon=0.2)
    ded = train_svr(X, y, C=0.3, epsilon=0.2, sample_weight=np.full(12, 2.0))
    Xq = rng.normal(size=(20, 3))
    assert np.allclose(dup.predict(Xq), ded.predict(Xq), atol=1e-6)


def test_svr_constant_target():
    m = train_svr(np.zeros((10, 4)), np.full(10, 7.0), C=100.0, epsilon=0.0)
    assert np.allclose(m.predict(np.random.default_rng(5).normal(size=(5, 4))), 7.0, atol=1e-6)


def test_embedding_files(tmp_path):
    v = np.array([1.5, -2.25, 3.0])
    write_embedding(tmp_path / "frame_000004.emb", v)
    assert np.array_equal(read_embedding(tmp_path / "frame_000004.emb"), v)
    prov = SidecarEmbeddings(tmp_path, 3)
    assert np.array_equal(prov(4), v)
    (tmp_path / "frame_000005.emb").write_bytes(b"\x05\x00\x00\x00" + bytes(8))
    with pytest.raises(FormatError):
        prov(5)
    with pytest.raises(FormatError):
        SidecarEmbeddings(tmp_path, 2)(4)


def test_provider_registry():
    register_embedding_provider(None)
    with pytest.raises(ConfigurationError):
        embeddings_for([0])
    register_embedding_provider(CallableEmbeddings(lambda i: [i, 2 * i], 2))
    try:
        assert embeddings_for([1, 3]).tolist() == [[1, 2], [3, 6]]
    finally:
        register_embedding_provider(None)


def test_block_features_shape_contract():
    with pytest.raises(ValueError):
        BlockFeatures(np.zeros(5))
