"""Command line entry point: simulate, train, run, eval."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .core import (
    CLASSES,
    FormatError,
    StreamConfig,
    StreamError,
    ValidationError,
    list_frame_files,
    load_annotations,
    load_frame_sequence,
    read_kv_file,
    read_pgm,
    write_kv_file,
)
from .dataset import DiskScene
from .detector import BoostedModel, DetectorConfig
from .flowtrack import (
    FlowTracker,
    Trajectory,
    direction_features,
    direction_label,
    filter_trajectories,
    train_direction,
    write_flow_csv,
)
from .fusion import CountingPipeline
from .metrics import AlignmentError, cross_validated_auc, detection_lag, error_confusion, mae, roc_auc, write_json
from .mlcore import ALERT_THRESHOLD, LinearSvmModel, TrainingError
from .pipeline import IncidentConfig, IncidentPipeline
from .regression import LinearCountModel, estimate_count_regression
from .synth import ScenarioSpec, generate

log = logging.getLogger("crowdlens")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

# file names inside a model directory
MODEL_FILES = {
    "full_body": "full_body.json",
    "head_shoulders": "head_shoulders.json",
    "head": "head.json",
    "regression": "regression.json",
    "direction": "direction.json",
    "flow_svm": "flow_svm.json",
    "tracklet_svm": "tracklet_svm.json",
}
PLAIN_REGRESSION_FILE = "regression_plain.json"


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# helpers


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"--config: {p} does not exist")
    return read_kv_file(p)


def _stream_dir(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"stream {p} does not exist")
    return p


def _frames_path(stream: Path) -> Path:
    return stream / "frames" if (stream / "frames").is_dir() else stream


def _stream_config(stream: Path, overrides: dict) -> StreamConfig:
    values = {}
    kv = stream / "stream.kv" if stream.is_dir() else None
    if kv is not None and kv.exists():
        values.update(read_kv_file(kv))
    values.update(overrides)
    return StreamConfig.from_mapping(values)


def _map_jobs(fn: Callable, items: Sequence, jobs: int) -> list:
    """Order-preserving map, in worker processes when jobs > 1."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    spec_path = Path(args.spec)
    if not spec_path.is_file():
        raise UsageError(f"spec file {spec_path} does not exist")
    values = read_kv_file(spec_path)
    if args.seed is not None:
        values["seed"] = args.seed
    spec = ScenarioSpec.from_dict(values)
    scene = generate(spec)
    out = scene.write(args.out)
    ratio = (spec.agent_height_bottom / spec.agent_height_top) ** 2
    write_kv_file(out / "stream.kv", {
        "fps": spec.fps,
        "weight_top": round(ratio, 6),
        "weight_bottom": 1.0,
        "min_box_px": spec.min_box_px,
        "gate_axis": list(spec.gate_axis),
    })
    print(f"wrote {len(scene)} frames of {spec.scenario} to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _load_scenes(dirs: Sequence[str]) -> list[DiskScene]:
    if not dirs:
        raise UsageError("--data: at least one stream directory is required")
    return [DiskScene(_stream_dir(d)) for d in dirs]


def _detector_config(cfg: StreamConfig) -> DetectorConfig:
    return DetectorConfig(min_box_px=cfg.min_box_px)


def _train_detectors(args, cfg: StreamConfig) -> list[Path]:
    from .metrics import train_test_split
    from .training import train_detector

    scenes = _load_scenes(args.data)
    if len(scenes) > 1:
        train, val = train_test_split(scenes, 0.1, args.seed)
    else:
        train, val = scenes, scenes
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for cls in CLASSES:
        model = train_detector(train, val, cls, _detector_config(cfg), rounds=args.rounds, seed=args.seed)
        path = out / MODEL_FILES[cls]
        model.save(path)
        written.append(path)
        print(f"{cls}: {model.n_rounds} rounds, threshold {model.score_threshold:.4f} -> {path}")
    return written


def _load_detectors(model_dir: Path) -> list[BoostedModel]:
    paths = [model_dir / MODEL_FILES[c] for c in CLASSES]
    for p in paths:
        if not p.is_file():
            raise UsageError(f"missing detector model {p}")
    return [BoostedModel.load(p) for p in paths]


def _records_job(job):
    from .training import count_records

    directory, model_dir, cfg_values = job
    cfg = StreamConfig.from_mapping(cfg_values)
    return count_records(DiskScene(directory), _load_detectors(Path(model_dir)), cfg.perspective,
                         _detector_config(cfg))


def _cfg_values(cfg: StreamConfig) -> dict:
    return {"fps": cfg.fps, "weight_top": cfg.weight_top, "weight_bottom": cfg.weight_bottom,
            "min_box_px": cfg.min_box_px, "gate_axis": list(cfg.gate_axis)}


def _train_regression(args, overrides: dict) -> list[Path]:
    from .training import train_count_models

    if args.models is None:
        raise UsageError("--models: the regression task needs the trained detector directory")
    model_dir = Path(args.models)
    _load_detectors(model_dir)
    dirs = [str(_stream_dir(d)) for d in args.data or []]
    if not dirs:
        raise UsageError("--data: at least one stream directory is required")
    jobs = [(d, str(model_dir), _cfg_values(_stream_config(Path(d), overrides))) for d in dirs]
    records = [r for part in _map_jobs(_records_job, jobs, args.jobs) for r in part]
    plain, residual = train_count_models(records)
    truth = np.array([r.truth for r in records], dtype=np.float64)
    fused = np.array([r.detected + estimate_count_regression(residual, r.masked) for r in records])
    reg = np.array([estimate_count_regression(plain, r.plain) for r in records])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    residual.save(out / MODEL_FILES["regression"])
    plain.save(out / PLAIN_REGRESSION_FILE)
    msg = (f"training MAE over {len(records)} frames: fused {mae(fused, truth):.3f}, "
           f"regression-only {mae(reg, truth):.3f}")
    log.info(msg)
    print(msg)
    return [out / MODEL_FILES["regression"], out / PLAIN_REGRESSION_FILE]


def _train_direction(args, overrides: dict) -> list[Path]:
    trajectories: list[Trajectory] = []
    labels = []
    for scene in _load_scenes(args.data):
        cfg = _stream_config(scene.directory, overrides)
        tracker = FlowTracker(None)
        tracker.keep_closed = True
        for gt in scene.truth.frames:
            tracker.step(list(gt.boxes), gt.frame_index)
        tracker.finish(len(scene) - 1)
        kept = filter_trajectories(tracker.closed_log)
        trajectories.extend(kept)
        labels.extend(direction_label(t, cfg.gate_axis) for t in kept)
    if len(set(labels)) < 2:
        raise TrainingError(f"direction training needs both directions; got {sorted(set(labels)) or 'none'}")
    model = train_direction(trajectories, labels, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / MODEL_FILES["direction"]
    model.save(path)
    acc = np.mean([(float(model.margin(f)[0]) >= 0) == (lab == "incoming")
                   for f, lab in zip((direction_features(t) for t in trajectories), labels)])
    print(f"direction: {len(trajectories)} trajectories, training accuracy {acc:.3f} -> {path}")
    return [path]


def _clip_job(job):
    from .training import clip_features

    directory, fps = job
    scene = DiskScene(directory, fps=fps)
    return clip_features(scene, IncidentConfig(fps=scene.spec.fps))


def _train_incident(args, overrides: dict) -> list[Path]:
    from .training import frame_labels, train_incident_models

    dirs = [str(_stream_dir(d)) for d in args.data or []]
    if not dirs:
        raise UsageError("--data: at least one stream directory is required")
    fps = float(overrides["fps"]) if "fps" in overrides else None
    # labels are checked before any feature extraction
    scenes = [DiskScene(d, fps=fps) for d in dirs]
    has_pos = any(s.truth.onset is not None and s.truth.onset + s.spec.fps < len(s) for s in scenes)
    has_neg = any(s.truth.onset is None or s.truth.onset > 5 for s in scenes)
    if not (has_pos and has_neg):
        raise TrainingError("incident training needs both incident and calm frames in the data")
    rate = scenes[0].spec.fps
    clips = _map_jobs(_clip_job, [(d, fps) for d in dirs], args.jobs)
    flow_model, trk_model = train_incident_models(clips, seed=args.seed, fps=rate)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    flow_model.save(out / MODEL_FILES["flow_svm"])
    trk_model.save(out / MODEL_FILES["tracklet_svm"])
    n_pos = int(sum((frame_labels(c, rate) > 0).sum() for c in clips))
    n_neg = int(sum((frame_labels(c, rate) < 0).sum() for c in clips))
    print(f"incident: {len(clips)} clips, {n_pos} incident / {n_neg} calm frames -> {out}")
    return [out / MODEL_FILES["flow_svm"], out / MODEL_FILES["tracklet_svm"]]


def cmd_train(args) -> int:
    overrides = _load_config(args.config)
    task = args.task
    if task == "detector":
        cfg = StreamConfig.from_mapping(overrides)
        if args.data:
            cfg = _stream_config(_stream_dir(args.data[0]), overrides)
        _train_detectors(args, cfg)
    elif task == "regression":
        _train_regression(args, overrides)
    elif task == "direction":
        _train_direction(args, overrides)
    else:
        _train_incident(args, overrides)
    return EXIT_OK


# ---------------------------------------------------------------------------
# run


@dataclass
class RunConfig:
    stream: Path
    models: dict  # name -> Path
    out: Path
    fps: float = 25.0
    alert_threshold: float = ALERT_THRESHOLD
    window_s: float = 2.0
    flow_window: int = 250
    weight_top: float = 1.0
    weight_bottom: float = 1.0
    min_box_px: int = 30
    background: Path | None = None
    incidents: bool = True
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not self.stream.exists():
            raise UsageError(f"stream: {self.stream} does not exist")
        needed = list(CLASSES) + ["regression", "direction"]
        if self.incidents:
            needed += ["flow_svm", "tracklet_svm"]
        for name in needed:
            p = self.models.get(name)
            if p is None or not Path(p).is_file():
                raise UsageError(f"{name}_model: missing model file {p}")
        if self.background is not None and not self.background.is_file():
            raise UsageError(f"background: {self.background} does not exist")
        if not 0.0 <= self.alert_threshold <= 1.0:
            raise ValidationError(f"alert_threshold: {self.alert_threshold} outside [0, 1]")
        if self.fps <= 0:
            raise ValidationError("fps: must be positive")
        if self.flow_window < 1:
            raise ValidationError("flow_window: must be at least one frame")
        if self.weight_top <= 0 or self.weight_bottom <= 0:
            raise ValidationError("weight_top/weight_bottom: must be positive")


def build_run_config(args, stream: Path) -> RunConfig:
    values = {}
    kv = stream / "stream.kv" if stream.is_dir() else None
    if kv is not None and kv.exists():
        values.update(read_kv_file(kv))
    values.update(_load_config(args.config))
    model_dir = Path(args.models) if args.models else Path(values.get("models", "."))
    models = {name: Path(values.get(f"{name}_model", model_dir / fname)) for name, fname in MODEL_FILES.items()}
    bg = args.background or values.get("background")
    if bg is None and stream.is_dir() and (stream / "background.pgm").exists():
        bg = stream / "background.pgm"
    try:
        rc = RunConfig(
            stream=stream,
            models=models,
            out=Path(args.out),
            fps=float(values.get("fps", 25.0)),
            alert_threshold=float(values.get("alert_threshold", ALERT_THRESHOLD)),
            window_s=float(values.get("window_s", 2.0)),
            flow_window=int(values.get("flow_window", 250)),
            weight_top=float(values.get("weight_top", 1.0)),
            weight_bottom=float(values.get("weight_bottom", 1.0)),
            min_box_px=int(values.get("min_box_px", 30)),
            background=Path(bg) if bg is not None else None,
            incidents=not args.no_incidents,
        )
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"run configuration: {exc}") from exc
    rc.validate()
    return rc


def _people(boxes):
    """Boxes standing for one person each: full bodies plus part boxes not inside one."""
    bodies = [b.roi for b in boxes if b.cls == "full_body"]
    out = [b for b in boxes if b.cls == "full_body"]
    for b in boxes:
        if b.cls != "full_body":
            cx, cy = b.roi.center
            if not any(r.contains_point(cx, cy) for r in bodies):
                out.append(b)
    return out


def run_stream(rc: RunConfig) -> dict:
    """Process one stream; every model is loaded before the first frame is read."""
    detectors = [BoostedModel.load(rc.models[c]) for c in CLASSES]
    residual = LinearCountModel.load(rc.models["regression"])
    direction = LinearSvmModel.load(rc.models["direction"])
    flow_svm = LinearSvmModel.load(rc.models["flow_svm"]) if rc.incidents else None
    trk_svm = LinearSvmModel.load(rc.models["tracklet_svm"]) if rc.incidents else None
    background = read_pgm(rc.background) if rc.background is not None else None
    files = _frames_path(rc.stream)
    if not list_frame_files(files):
        raise StreamError(f"{rc.stream}: no frames found")

    from .core import PerspectiveMap

    counter = CountingPipeline(detectors, residual, PerspectiveMap(rc.weight_top, rc.weight_bottom),
                               DetectorConfig(min_box_px=rc.min_box_px), background=background)
    flows = FlowTracker(direction, window=rc.flow_window)
    incidents = None
    if rc.incidents:
        icfg = IncidentConfig(fps=rc.fps, window_s=rc.window_s, threshold=rc.alert_threshold)
        incidents = IncidentPipeline(flow_svm, trk_svm, icfg, background)

    rc.out.mkdir(parents=True, exist_ok=True)
    windows = []
    n = 0
    alerts = 0
    t_start = time.perf_counter()
    with open(rc.out / "counts.jsonl", "w") as counts_fh, open(rc.out / "incidents.jsonl", "w") as inc_fh:
        for frame in load_frame_sequence(files, rc.fps):
            est = counter.process(frame.pixels, frame.index)
            counts_fh.write(json.dumps(est.to_record(), sort_keys=True) + "\n")
            windows.extend(flows.step(_people(est.detection_boxes), frame.index))
            if incidents is not None:
                score = incidents.step(frame.pixels, frame.index)
                alerts += score.alert_start
                inc_fh.write(json.dumps(score.to_record(), sort_keys=True) + "\n")
            n += 1
    if n:
        windows.extend(flows.finish(n - 1))
    write_flow_csv(rc.out / "flows.csv", windows)
    elapsed = time.perf_counter() - t_start
    timing = {"frames": n, "counting_fps": round(counter.fps, 2),
              "overall_fps": round(n / elapsed, 2) if elapsed > 0 else 0.0}
    write_json(rc.out / "timing.json", timing)
    return {"frames": n, "alerts": alerts, "windows": len(windows), **timing}


def _run_job(rc: RunConfig) -> dict:
    return run_stream(rc)


def cmd_run(args) -> int:
    streams = [_stream_dir(s) for s in args.stream]
    configs = []
    for s in streams:
        rc = build_run_config(args, s)
        if len(streams) > 1:
            rc.out = Path(args.out) / s.name
        configs.append(rc)
    for rc, res in zip(configs, _map_jobs(_run_job, configs, args.jobs)):
        print(f"{rc.stream}: {res['frames']} frames, {res['alerts']} alerts, {res['windows']} flow windows; "
              f"counting throughput {res['counting_fps']:.1f} fps (overall {res['overall_fps']:.1f} fps)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _truth_file(path) -> Path:
    p = Path(path)
    if p.is_dir():
        p = p / "truth.jsonl"
    if not p.is_file():
        raise UsageError(f"truth file {p} does not exist")
    return p


def _read_jsonl(path) -> list[dict]:
    p = Path(path)
    if p.is_dir():
        raise UsageError(f"{p} is a directory, expected a .jsonl file")
    if not p.is_file():
        raise UsageError(f"{p} does not exist")
    out = []
    with open(p) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise FormatError(f"{p}:{lineno}: {exc}") from exc
    return out


def _keyed(records: list[dict], key: str, source) -> dict[int, float]:
    out = {}
    for r in records:
        try:
            out[int(r["frame"])] = float(r[key])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{source}: record without {key!r}: {r}") from exc
    return out


def _check_frames(pred: dict, truth: dict, source) -> None:
    if set(pred) != set(truth):
        lo_p, hi_p = (min(pred), max(pred)) if pred else (None, None)
        lo_t, hi_t = min(truth), max(truth)
        raise AlignmentError(
            f"{source}: frames {lo_p}..{hi_p} ({len(pred)}) do not match truth frames "
            f"{lo_t}..{hi_t} ({len(truth)})")


def cmd_eval(args) -> int:
    truths = [_truth_file(t) for t in args.truth]
    if not args.counts and not args.incidents:
        raise UsageError("eval needs --counts and/or --incidents")
    for name, items in (("--counts", args.counts), ("--incidents", args.incidents)):
        if items and len(items) != len(truths):
            raise UsageError(f"{name}: {len(items)} files for {len(truths)} truth files")
    gts = [load_annotations(t, min_box_px=0) for t in truths]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.counts:
        est_all, tru_all = [], []
        for path, gt in zip(args.counts, gts):
            pred = _keyed(_read_jsonl(path), "total", path)
            _check_frames(pred, gt, path)
            keys = sorted(gt)
            est_all.extend(pred[k] for k in keys)
            tru_all.extend(gt[k].count for k in keys)
        conf = error_confusion(est_all, tru_all)
        table = conf.format_table()
        (out / "count_report.txt").write_text(
            "Absolute error distribution (% of frames per true-count bin)\n" + table + "\n"
            + "frames per bin: " + " ".join(str(v) for v in conf.frames) + "\n")
        conf.write_csv(out / "count_report.csv")
        write_json(out / "count_report.json", {**conf.to_json(), "mae": round(mae(est_all, tru_all), 6)})
        print(table)
    if args.incidents:
        scores, labels, clips = [], [], []
        for path, gt, tpath in zip(args.incidents, gts, truths):
            recs = _read_jsonl(path)
            conf = _keyed(recs, "confidence", path)
            _check_frames(conf, gt, path)
            keys = sorted(gt)
            y = [1 if gt[k].incident else 0 for k in keys]
            s = [conf[k] for k in keys]
            scores.extend(s)
            labels.extend(y)
            onset = min((k for k in keys if gt[k].incident), default=None)
            alert_frames = [int(r["frame"]) for r in recs if r.get("alert")]
            clip = {"stream": tpath.parent.name, "frames": len(keys), "max_confidence": round(max(s), 6),
                    "onset": onset}
            if onset is not None:
                lag = detection_lag(alert_frames, onset, args.fps)
                clip.update(lag_s=lag.lag_s, false_alarms=lag.false_alarms)
            clips.append(clip)
        if len(set(labels)) < 2:
            raise ValidationError("incident labels: AUC needs both incident and calm frames")
        res = cross_validated_auc(scores, labels, k=args.folds, seed=args.seed if args.seed is not None else 0)
        lags = [c["lag_s"] for c in clips if c.get("lag_s") is not None]
        report = {
            "frame_auc": round(res.auc, 6),
            "folds": [{**f, "auc": None if f["auc"] is None else round(f["auc"], 6)} for f in res.folds],
            "clips": clips,
            "mean_lag_s": round(float(np.mean(lags)), 6) if lags else None,
            "missed": sum(1 for c in clips if c["onset"] is not None and c.get("lag_s") is None),
        }
        clip_labels = [1 if c["onset"] is not None else 0 for c in clips]
        if len(set(clip_labels)) == 2:
            report["clip_auc"] = round(roc_auc([c["max_confidence"] for c in clips], clip_labels).auc, 6)
        write_json(out / "incident_report.json", report)
        lines = [f"frame AUC {res.auc:.4f}"]
        lines += [f"  fold {f['fold']}: n={f['n']} AUC " + ("n/a" if f["auc"] is None else f"{f['auc']:.4f}")
                  for f in res.folds]
        if "clip_auc" in report:
            lines.append(f"clip AUC {report['clip_auc']:.4f}")
        if report["mean_lag_s"] is not None:
            lines.append(f"mean detection lag {report['mean_lag_s']:.2f} s over {len(lags)} incidents")
        (out / "incident_report.txt").write_text("\n".join(lines) + "\n")
        print("\n".join(lines))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _global_flags(parser: argparse.ArgumentParser, top: bool) -> None:
    # subcommands repeat the flags with suppressed defaults so values given
    # before the subcommand survive
    d = (lambda v: v) if top else (lambda v: argparse.SUPPRESS)
    parser.add_argument("--config", default=d(None), help="key = value configuration file")
    parser.add_argument("--seed", type=int, default=d(None), help="seed for every random choice")
    parser.add_argument("--jobs", type=int, default=d(1), help="worker processes across independent streams")
    parser.add_argument("--verbose", "-v", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, top=False)

    p = argparse.ArgumentParser(prog="crowdlens",
                                description="Crowd counting, pedestrian flow and incident detection.")
    _global_flags(p, top=True)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="render a synthetic scene with ground truth")
    s.add_argument("spec", help="scenario spec (key = value)")
    s.add_argument("out", help="output directory")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", parents=[common], help="train one model family")
    t.add_argument("task", choices=["detector", "regression", "direction", "incident"])
    t.add_argument("--data", nargs="+", help="stream directories written by simulate")
    t.add_argument("--out", required=True, help="model directory to write")
    t.add_argument("--models", help="directory with trained detectors (regression task)")
    t.add_argument("--rounds", type=int, default=256, help="boosting rounds (detector task)")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("run", parents=[common], help="process streams with trained models")
    r.add_argument("stream", nargs="+", help="stream directory or frame list file")
    r.add_argument("--models", help="model directory (default: models key of --config)")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--background", help="background plate (PGM)")
    r.add_argument("--no-incidents", action="store_true", help="skip the incident branch")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", parents=[common], help="score run outputs against ground truth")
    e.add_argument("--truth", nargs="+", required=True, help="truth.jsonl files or stream directories")
    e.add_argument("--counts", nargs="+", help="counts.jsonl files, one per truth file")
    e.add_argument("--incidents", nargs="+", help="incidents.jsonl files, one per truth file")
    e.add_argument("--out", required=True, help="report directory")
    e.add_argument("--folds", type=int, default=5)
    e.add_argument("--fps", type=float, default=25.0)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "train" and args.seed is None:
        args.seed = 0
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ValidationError, FormatError, StreamError, AlignmentError, TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
