from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from crowdlens.synth import ScenarioSpec, generate

settings.register_profile("crowdlens", max_examples=100, deadline=None, derandomize=True)
settings.load_profile("crowdlens")


def scene(scenario="sparse_walk", n=5, seed=0, duration=2.0, **kw):
    return generate(ScenarioSpec(scenario=scenario, n_agents=n, seed=seed, duration_s=duration, **kw))


def detector_scenes():
    """Sparse walks, a few dense crowds and empty plates for training; sparse walks for validation."""
    train = [scene("sparse_walk", n, 100 + i, 3.0) for i, n in enumerate([2, 4, 6, 8, 10, 3, 5, 7])]
    train += [scene("dense_crowd", n, 200 + i, 3.0) for i, n in enumerate([15, 25, 40])]
    train += [scene("sparse_walk", 0, 300 + i, 1.0) for i in range(3)]
    val = [scene("sparse_walk", n, 400 + i, 3.0) for i, n in enumerate([0, 3, 6, 9])]
    return train, val


@pytest.fixture(scope="session")
def full_body_model():
    """The default full-body detector trained on a small scene suite (about 30 s)."""
    from crowdlens.training import train_detector

    train, val = detector_scenes()
    return train_detector(train, val, "full_body", rounds=256, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class IncidentClips(tuple):
    """(train, test) clip features with the wall time spent extracting them."""

    seconds: float = 0.0


@pytest.fixture(scope="session")
def incident_clips():
    """20 fight / 20 dance / 20 laminar clips for training and as many again for testing."""
    import time

    from crowdlens.synth import incident_suite
    from crowdlens.training import clip_features

    t0 = time.perf_counter()
    train = [clip_features(generate(s)) for s in incident_suite(20, seed=1)]
    test = [clip_features(generate(s)) for s in incident_suite(20, seed=2)]
    out = IncidentClips((train, test))
    out.seconds = time.perf_counter() - t0
    return out


SMALL = "width = 352\nheight = 288\nmin_box_px = 11\n"
CLI_SPECS = {
    "sparse": "scenario = sparse_walk\nn_agents = 6\nduration_s = 2\nseed = 21\n" + SMALL,
    "dense": "scenario = dense_crowd\nn_agents = 40\nduration_s = 2\nseed = 22\n" + SMALL,
    "fight": "scenario = fight\nn_agents = 12\nduration_s = 4\nseed = 23\nonset_s = 1.5\n" + SMALL,
    "dance": "scenario = dance\nn_agents = 12\nduration_s = 4\nseed = 24\n" + SMALL,
}


def run_cli_workflow(root):
    """simulate -> train (all four tasks) -> run -> eval, entirely through ``main``.

    Returns the directory layout; raises if any step exits non-zero.
    """
    from pathlib import Path

    from crowdlens.cli import main

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)

    def call(*argv):
        code = main([str(a) for a in argv])
        if code != 0:
            raise AssertionError(f"crowdlens {' '.join(map(str, argv))} exited {code}")

    streams = {}
    for name, text in CLI_SPECS.items():
        (root / f"{name}.kv").write_text(text)
        call("simulate", root / f"{name}.kv", root / name)
        streams[name] = root / name
    models = root / "models"
    data = [streams["sparse"], streams["dense"]]
    call("train", "detector", "--data", *data, "--out", models, "--rounds", 32, "--seed", 0)
    call("train", "regression", "--data", *data, "--models", models, "--out", models)
    call("train", "direction", "--data", streams["sparse"], "--out", models)
    call("train", "incident", "--data", streams["fight"], streams["dance"], "--out", models)
    out = root / "out"
    call("run", streams["sparse"], streams["fight"], "--models", models, "--out", out)
    reports = root / "reports"
    call("eval", "--truth", streams["sparse"], streams["fight"],
         "--counts", out / "sparse" / "counts.jsonl", out / "fight" / "counts.jsonl",
         "--incidents", out / "sparse" / "incidents.jsonl", out / "fight" / "incidents.jsonl",
         "--out", reports)
    return {"root": root, "streams": streams, "models": models, "out": out, "reports": reports}


@pytest.fixture(scope="session")
def cli_workflow(tmp_path_factory):
    return run_cli_workflow(tmp_path_factory.mktemp("cli"))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)


_SLOW_FIXTURES = {"incident_clips", "cli_workflow", "counting_models"}


def pytest_collection_modifyitems(items):
    for item in items:
        if item.module.__name__.endswith("test_acceptance") or _SLOW_FIXTURES & set(item.fixturenames):
            item.add_marker(pytest.mark.slow)
