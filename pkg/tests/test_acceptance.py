"""Acceptance criteria, one test each. Every test records a PASS/FAIL line that
is printed in the terminal summary (see conftest.py)."""

from __future__ import annotations

import json
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import detector_scenes, run_cli_workflow
from crowdlens.cli import MODEL_FILES, PLAIN_REGRESSION_FILE, main
from crowdlens.core import CLASSES, PerspectiveMap, Roi
from crowdlens.detector import compute_channels
from crowdlens.flowtrack import classify_direction, direction_features, train_direction, trajectory_from_points
from crowdlens.incident_flow import FlowField, flow_histogram_feature
from crowdlens.metrics import crowd_bin, detection_lag, pairwise_auc, roc_auc
from crowdlens.mlcore import ALERT_THRESHOLD, NON_INCIDENT_CEILING
from crowdlens.regression import N_FEATURES, estimate_count_regression, extract_block_features, train_linear
from crowdlens.synth import ScenarioSpec, generate, synthetic_trajectories
from crowdlens.training import count_records, frame_labels, score_clip, train_count_models, train_detector, train_incident_models

RESULTS: list[str] = []


def record(n: int, title: str, ok: bool, detail: str) -> None:
    RESULTS.append(f"{'PASS' if ok else 'FAIL'} criterion {n} ({title}): {detail}")
    assert ok, detail


# ---------------------------------------------------------------------------
# 1. oracle equivalence


def test_criterion_1_oracles():
    from test_detector import brute_channels
    from test_incident_flow import brute_histogram
    from test_regression import brute_features, normal_equation_predictions

    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    failures = []
    for k in range(8):
        fg = rng.random((48, 40)) < 0.4
        ed = rng.random((48, 40)) < 0.2
        ex = [Roi(int(rng.integers(0, 30)), int(rng.integers(0, 36)), 9, 12) for _ in range(k % 3)]
        got = extract_block_features(fg, ed, PerspectiveMap(), ex).values.tolist()
        if got != [float(v) for v in brute_features(fg, ed, PerspectiveMap(), ex)]:
            failures.append("block features")
    for _ in range(8):
        h, w = int(rng.integers(12, 48)), int(rng.integers(16, 64))
        u, v = rng.integers(-7, 8, (2, h, w)).astype(np.float64)
        if not np.array_equal(flow_histogram_feature(FlowField(u, v)).values, brute_histogram(u, v, 0.5, 8, 6)):
            failures.append("flow histogram")
    auc_err = 0.0
    for _ in range(20):
        s = np.round(rng.random(50), 1)
        y = rng.random(50) < 0.5
        if y.all() or not y.any():
            continue
        auc_err = max(auc_err, abs(roc_auc(s, y).auc - pairwise_auc(s, y)))
    if auc_err > 1e-12:
        failures.append(f"AUC error {auc_err:.2e}")
    ols_err = 0.0
    for _ in range(5):
        X = rng.random((100, N_FEATURES))
        y = X @ rng.normal(0, 5, N_FEATURES) + rng.normal(0, 0.5, 100) + 7
        Xq = rng.random((50, N_FEATURES))
        want = normal_equation_predictions(X, y, Xq)
        ols_err = max(ols_err, float(np.max(np.abs(train_linear(X, y).raw(Xq) - want) / np.abs(want))))
    if ols_err > 1e-6:
        failures.append(f"OLS relative error {ols_err:.2e}")
    for cell in (2, 4):
        img = rng.integers(0, 256, (40, 52), dtype=np.uint8)
        if not np.array_equal(compute_channels(img, cell).channels, brute_channels(img, cell)):
            failures.append("channels")
    secs = time.perf_counter() - t0
    ok = not failures and secs < 60
    record(1, "oracle equivalence", ok,
           f"max AUC error {auc_err:.1e}, max OLS rel. error {ols_err:.1e}, mismatches {failures or 'none'}, {secs:.1f} s")


# ---------------------------------------------------------------------------
# 2. fusion dominance


def _count_scene(n: int, seed: int) -> ScenarioSpec:
    return ScenarioSpec("sparse_walk" if n <= 10 else "dense_crowd", n, 2.0, seed=seed)


@pytest.fixture(scope="session")
def counting_models(full_body_model):
    """Detectors for all three classes plus the residual and plain regressors."""
    t0 = time.perf_counter()
    train, val = detector_scenes()
    dets = [full_body_model] + [train_detector(train, val, c, rounds=256, seed=0) for c in CLASSES[1:]]
    pmap = PerspectiveMap(4.0, 1.0)
    rng = np.random.default_rng(0)
    sizes = list(range(0, 11)) + [int(v) for v in rng.integers(11, 76, 25)]
    records = []
    for i, n in enumerate(sizes):
        records += count_records(generate(_count_scene(n, 1000 + i)), dets, pmap)
    plain, residual = train_count_models(records)
    return dets, plain, residual, pmap, time.perf_counter() - t0


def test_criterion_2_fusion_dominance(counting_models):
    dets, plain, residual, pmap, train_secs = counting_models
    t0 = time.perf_counter()
    rows = []
    for i, n in enumerate([0, 2, 5, 8, 10, 12, 18, 24, 30, 40, 48, 55, 62, 70, 75]):
        for r in count_records(generate(_count_scene(n, 5000 + i)), dets, pmap):
            fused = r.detected + estimate_count_regression(residual, r.masked)
            rows.append((crowd_bin(r.truth), r.truth, r.detected, fused, estimate_count_regression(plain, r.plain)))
    A = np.array(rows, dtype=float)
    ok = True
    parts = []
    for b in range(4):
        S = A[A[:, 0] == b]
        t = S[:, 1]
        det, fus, reg = (float(np.mean(np.abs(S[:, c] - t))) for c in (2, 3, 4))
        ok &= fus <= det and fus <= reg
        parts.append(f"bin {b}: fused {fus:.2f} / det {det:.2f} / reg {reg:.2f}")
    low = A[A[:, 0] <= 1]
    high = A[A[:, 0] >= 2]
    within5 = float(np.mean(np.abs(np.rint(low[:, 3]) - low[:, 1]) <= 5))
    within25 = float(np.mean(np.abs(high[:, 3] - high[:, 1]) <= 0.25 * high[:, 1]))
    secs = train_secs + time.perf_counter() - t0
    ok &= within5 >= 0.9 and within25 >= 0.8 and secs < 600
    record(2, "fusion dominance", ok,
           "; ".join(parts) + f"; low crowd within 5: {within5:.1%}; high crowd within 25%: {within25:.1%}; {secs:.0f} s")


# ---------------------------------------------------------------------------
# 3. incident detection


def test_criterion_3_incidents(incident_clips):
    train, test = incident_clips
    t0 = time.perf_counter()
    flow_model, trk_model = train_incident_models(train)
    scores, labels, lags = [], [], []
    fight_peaks, calm_peaks = [], []
    for clip in test:
        stream = score_clip(clip, flow_model, trk_model)
        conf = np.array([s.confidence for s in stream])
        lab = frame_labels(clip)
        scores.append(conf[lab != 0])
        labels.append(lab[lab != 0])
        if clip.onset is not None:
            fight_peaks.append(conf.max())
            lags.append(detection_lag([s.frame_index for s in stream if s.alert], clip.onset).lag_s)
        else:
            calm_peaks.append(conf.max())
    auc = roc_auc(np.concatenate(scores), np.concatenate(labels)).auc
    fight_peaks, calm_peaks = np.array(fight_peaks), np.array(calm_peaks)
    all_fights = bool(np.all(fight_peaks > ALERT_THRESHOLD))
    calm_ok = float(np.mean(calm_peaks <= NON_INCIDENT_CEILING + 0.1))
    hit = [v for v in lags if v is not None]
    mean_lag = float(np.mean(hit)) if hit else float("inf")
    secs = incident_clips.seconds + time.perf_counter() - t0
    ok = auc >= 0.9 and all_fights and calm_ok >= 0.9 and mean_lag <= 10.0 and secs < 900
    record(3, "incident detection", ok,
           f"frame AUC {auc:.3f}; fight peaks min {fight_peaks.min():.2f} ({np.sum(fight_peaks > ALERT_THRESHOLD)}/"
           f"{len(fight_peaks)} above {ALERT_THRESHOLD}); non-fight clips <= 0.3: {calm_ok:.0%} "
           f"(max {calm_peaks.max():.2f}); mean lag {mean_lag:.2f} s over {len(hit)} detections; {secs:.0f} s")


# ---------------------------------------------------------------------------
# 4. flow classification


def test_criterion_4_flow_direction():
    train = synthetic_trajectories(200, noise=0.1, seed=41)
    test = synthetic_trajectories(200, noise=0.1, seed=42)
    label = lambda inc: "incoming" if inc else "outgoing"  # noqa: E731
    trajs = [trajectory_from_points(k, p) for k, (p, _) in enumerate(train)]
    model = train_direction(trajs, [label(inc) for _, inc in train])
    hits = [classify_direction(trajectory_from_points(k, p), model) == label(inc) for k, (p, inc) in enumerate(test)]
    acc = float(np.mean(hits))
    anti = all(
        np.array_equal(direction_features(t.reversed())[:4], -direction_features(t)[:4])
        for t in (trajectory_from_points(k, p) for k, (p, _) in enumerate(test))
    )
    record(4, "flow classification", anti and acc >= 0.95,
           f"antisymmetry exact on 200 trajectories: {anti}; accuracy {acc:.3f} with 10% noise")


# ---------------------------------------------------------------------------
# 5. determinism


def _tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "timing.json"}


def test_criterion_5_cli_determinism(cli_workflow, tmp_path):
    again = run_cli_workflow(tmp_path / "again")
    a, b = _tree(cli_workflow["root"]), _tree(again["root"])
    groups = {"frames": [k for k in a if "/frames/" in k], "models": [k for k in a if k.startswith("models/")],
              "metrics": [k for k in a if k.startswith("reports/")],
              "outputs": [k for k in a if k.startswith("out/")]}
    differing = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    ok = not differing and all(groups.values())
    record(5, "determinism", ok,
           ", ".join(f"{len(v)} {g} files" for g, v in groups.items())
           + (" byte-identical across reruns" if ok else f"; differing: {differing[:5]}"))


# ---------------------------------------------------------------------------
# 6. property suites


PROPERTIES = [
    ("NMS idempotence", "test_detector", "test_nms_idempotent"),
    ("clamp non-negativity", "test_regression", "test_estimates_non_negative"),
    ("total >= detected", "test_fusion", "test_total_at_least_detected"),
    ("confusion columns sum to 100", "test_metrics", "test_confusion_columns_sum_to_100"),
    ("confidences in [0,1]", "test_mlcore", "test_stream_confidences_in_unit_interval"),
    ("tracklet duration cap", "test_tracklets", "test_duration_capped"),
    ("calibration monotonicity", "test_mlcore", "test_calibrated_probability_monotone"),
]


def test_criterion_6_property_suites():
    import importlib

    counts = {}
    for name, module, fn in PROPERTIES:
        test = getattr(importlib.import_module(module), fn)
        inner = test.hypothesis.inner_test
        n = [0]

        def counted(*args, _inner=inner, _n=n, **kwargs):
            _n[0] += 1
            return _inner(*args, **kwargs)

        test.hypothesis.inner_test = counted
        try:
            test()
        finally:
            test.hypothesis.inner_test = inner
        counts[name] = n[0]
    ok = all(v >= 100 for v in counts.values())
    record(6, "property suites", ok, ", ".join(f"{k}: {v} cases" for k, v in counts.items()))


# ---------------------------------------------------------------------------
# 7. throughput


def test_criterion_7_throughput(counting_models, cli_workflow, tmp_path, capsys):
    dets, plain, residual, pmap, _ = counting_models
    models = tmp_path / "models"
    models.mkdir()
    for m, cls in zip(dets, CLASSES):
        m.save(models / MODEL_FILES[cls])
    residual.save(models / MODEL_FILES["regression"])
    plain.save(models / PLAIN_REGRESSION_FILE)
    for key in ("direction", "flow_svm", "tracklet_svm"):
        shutil.copy(cli_workflow["models"] / MODEL_FILES[key], models / MODEL_FILES[key])
    rates = {}
    for name, n in (("sparse", 8), ("dense", 60)):
        spec = tmp_path / f"{name}.kv"
        spec.write_text(f"scenario = {'sparse_walk' if n <= 10 else 'dense_crowd'}\nn_agents = {n}\n"
                        f"duration_s = 4\nseed = {70 + n}\n")
        assert main(["simulate", str(spec), str(tmp_path / name)]) == 0
        assert main(["run", str(tmp_path / name), "--models", str(models), "--out", str(tmp_path / f"o{name}")]) == 0
        timing = json.loads((tmp_path / f"o{name}" / "timing.json").read_text())
        rates[name] = timing["counting_fps"]
    capsys.readouterr()
    ok = all(v >= 25.0 for v in rates.values())
    record(7, "throughput", ok, ", ".join(f"{k} 704x576: {v:.1f} fps" for k, v in rates.items())
           + " counting throughput reported by cmd_run")
