from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crowdlens.metrics import (
    AlignmentError,
    cross_validated_auc,
    detection_lag,
    error_confusion,
    format_confusion,
    kfold,
    mae,
    pairwise_auc,
    roc_auc,
    train_test_split,
)

TRUTH = np.array([0, 3, 10, 11, 20, 25, 26, 40, 50, 51, 60, 75])


def test_perfect_estimator():
    conf = error_confusion(TRUTH.astype(float), TRUTH)
    assert np.array_equal(conf.cells[0], [100, 100, 100, 100])
    assert conf.cells[1:].sum() == 0
    assert conf.frames.tolist() == [3, 3, 3, 3]


def test_constant_offset_seven():
    conf = error_confusion(TRUTH + 7.0, TRUTH)
    assert np.array_equal(conf.cells[1], [100, 100, 100, 100])


def test_rounding_half_to_even_and_bins():
    # 2.5 rounds to 2 (error 2), 8.5 rounds to 8 (error 6)
    conf = error_confusion([2.5, 8.5], [0, 2])
    assert conf.cells[:, 0].tolist() == [50, 50, 0, 0, 0]
    conf = error_confusion([100.0], [0])
    assert conf.cells[4, 0] == 100


def test_counts_above_range_ignored():
    conf = error_confusion([80.0, 5.0], [80, 5])
    assert conf.frames.tolist() == [1, 0, 0, 0]


def test_format_reference_fusion_columns():
    cells = np.array([[100, 99, 92, 91], [0, 1, 8, 9], [0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]], float)
    lines = format_confusion(cells).splitlines()
    assert len(lines) == 5  # header + four error rows; the >20 row is hidden
    rows = [ln.split() for ln in lines[1:]]
    assert [r[1] for r in rows] == ["100", "0", "0", "0"]
    assert [r[4] for r in rows] == ["91", "9", "0", "0"]
    assert lines[0].split() == ["Abs.", "error", "[0,10]", "[11,25]", "[26,50]", "[51,75]"]


def test_format_shows_gross_error_row():
    cells = np.zeros((5, 4))
    cells[4] = 100
    assert format_confusion(cells).splitlines()[-1].split()[0] == ">20"


def test_alignment_errors():
    with pytest.raises(AlignmentError):
        error_confusion([1.0, 2.0], [1])
    with pytest.raises(AlignmentError):
        error_confusion({0: 1.0, 1: 2.0}, {0: 1, 2: 2})
    assert mae({1: 3.0, 0: 1.0}, {0: 0, 1: 3}) == 0.5


@given(st.lists(st.tuples(st.integers(0, 75), st.floats(-50, 200)), min_size=1, max_size=200))
def test_confusion_columns_sum_to_100(pairs):
    truth, est = zip(*pairs)
    conf = error_confusion(est, truth)
    for c in range(4):
        total = conf.column(c).sum()
        if conf.frames[c]:
            assert total == pytest.approx(100.0, abs=0.5)
        else:
            assert total == 0


def test_auc_examples():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [-1, -1, 1, 1]).auc == 1.0
    rng = np.random.default_rng(0)
    assert roc_auc(rng.random(20000), rng.random(20000) < 0.5).auc == pytest.approx(0.5, abs=0.05)
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [1, 1])


def test_auc_random_fifty_against_pairs():
    rng = np.random.default_rng(1)
    s = np.round(rng.random(50), 1)  # plenty of ties
    y = rng.random(50) < 0.4
    assert abs(roc_auc(s, y).auc - pairwise_auc(s, y)) <= 1e-12


labelled = st.lists(st.tuples(st.integers(-20, 20), st.booleans()), min_size=2, max_size=80).filter(
    lambda p: any(b for _, b in p) and not all(b for _, b in p))


@given(labelled)
def test_auc_equals_pair_count(pairs):
    s, y = map(np.array, zip(*pairs))
    assert abs(roc_auc(s / 4.0, y).auc - pairwise_auc(s / 4.0, y)) <= 1e-12


@given(labelled)
def test_auc_negation_symmetry(pairs):
    s, y = map(np.array, zip(*pairs))
    assert roc_auc(s, y).auc + roc_auc(-s, y).auc == pytest.approx(1.0, abs=1e-12)


def test_roc_curve_endpoints():
    r = roc_auc([3, 1, 2, 2], [1, 0, 1, 0])
    assert (r.tpr[0], r.fpr[0], r.tpr[-1], r.fpr[-1]) == (0, 0, 1, 1)
    assert np.all(np.diff(r.tpr) >= 0) and np.all(np.diff(r.fpr) >= 0)


def test_kfold_examples():
    items = list(range(10))
    folds = kfold(items, 5, seed=3)
    assert [len(f) for f in folds] == [2] * 5
    assert sorted(sum(folds, [])) == items
    assert kfold(items, 5, seed=3) == folds
    with pytest.raises(ValueError):
        kfold(items, 11)


@given(st.integers(1, 60), st.integers(1, 60), st.integers(0, 100))
def test_kfold_partition(n, k, seed):
    if k > n:
        return
    folds = kfold(list(range(n)), k, seed)
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1
    assert sorted(sum(folds, [])) == list(range(n))


def test_train_test_split_ninety_ten():
    train, test = train_test_split(list(range(50)), 0.1, seed=0)
    assert len(test) == 5 and len(train) == 45
    assert sorted(train + test) == list(range(50))


def test_cross_validated_folds():
    rng = np.random.default_rng(2)
    y = np.r_[np.ones(30), -np.ones(30)]
    s = y + rng.normal(0, 1, 60)
    r = cross_validated_auc(s, y, k=5)
    assert len(r.folds) == 5 and sum(f["n"] for f in r.folds) == 60
    assert r.auc == roc_auc(s, y).auc


def test_lag_examples():
    assert detection_lag([250, 251], 250).lag_s == 0.0
    assert detection_lag([500], 250, fps=25.0).lag_s == 10.0
    miss = detection_lag([], 250)
    assert miss.lag_s is None and miss.missed


def test_lag_grace_and_false_alarms():
    # inside the 1 s grace window counts as detection (negative lag)
    assert detection_lag([240], 250).lag_s == pytest.approx(-0.4)
    r = detection_lag([10, 11, 12, 100, 300], 250)
    assert r.false_alarms == 2 and r.lag_s == 2.0
