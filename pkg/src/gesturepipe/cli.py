"""``gesturepipe`` command line.

Exit codes: 0 success, 1 validation failure, 2 I/O error.
"""
from __future__ import annotations

import argparse
import glob
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import evaluation as ev
from . import models as M
from . import simgen as sg
from .cloud import read_cloud, write_cloud
from .config import ENV_VAR, ConfigError, PipelineConfig, load_config
from .nncore import grad_check
from .pipeline import GesturePipeline, PipelineParams, write_frame_log
from .poseseq import AugmentParams, read_sequence_csv, write_sequence_csv
from .teleop import GestureMap, TeleopController, write_log_csv

log = logging.getLogger("gesturepipe")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2

DEFAULT_SCRIPT = "0:2,1:3,0:1,7:3,0:1,6:3,0:1,13:3,0:1,14:3,0:2"


class ValidationFailure(Exception):
    """A check ran and failed (as opposed to bad input)."""


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _write_json(path, obj) -> None:
    M.write_json(path, obj)


def _file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _run_manifest(path, command: str, cfg: PipelineConfig, seed: int, inputs: dict, **extra) -> None:
    """Sidecar manifest for outputs that are not datasets or weights."""
    _write_json(path, {"command": command, "seed": seed, "config_sha256": cfg.digest(),
                       "inputs": {k: _file_sha256(v) for k, v in inputs.items()}, **extra})


def _subject_from_record(rec: dict) -> sg.Subject:
    style = rec["style"]
    return sg.Subject(rec["id"], sg.SkeletonModel(**rec["skeleton"]),
                      sg.SubjectStyle(tuple(style["angle_offsets"]), style["amplitude"], style["period_scale"]))


def _parse_script(text: str) -> list[tuple[int, float]]:
    out = []
    for part in text.split(","):
        gid, sec = part.split(":")
        gid, sec = int(gid), float(sec)
        if not 0 <= gid <= sg.N_GESTURES or sec <= 0:
            raise ValueError(f"bad script entry {part!r}")
        out.append((gid, sec))
    return out


def _load_gesture_dataset(path) -> tuple[dict, list, list]:
    man = json.loads(Path(path, "manifest.json").read_text())
    if man.get("kind") != "gesture":
        raise ValueError(f"{path} is not a gesture dataset")
    recs, steady = [], []
    for f in man["files"]:
        recs.append(read_sequence_csv(Path(path, f["file"]), man["rate"], f["subject"]))
        steady.append(not f.get("transition", False))
        if recs[-1].label != f["label"]:
            raise ValueError(f"{f['file']}: label does not match manifest")
    split = man["split"]
    # transition clips are training material only; evaluation uses full recordings
    train = [r for r in recs if r.subject in split["train"]]
    test = [r for r, ok in zip(recs, steady) if ok and r.subject in split["test"]]
    return man, train, test


def _load_pose_dataset(path, cfg: PipelineConfig) -> tuple[dict, sg.PoseDataset]:
    man = json.loads(Path(path, "manifest.json").read_text())
    if man.get("kind") != "pose":
        raise ValueError(f"{path} is not a pose dataset")
    ds = sg.PoseDataset.load(Path(path, "dataset.npz"), cfg.projection)
    if ds.digest() != man["sha256"]:
        raise ValueError(f"{path}: dataset hash does not match manifest")
    return man, ds


def _stream_frames(path):
    files = sorted(glob.glob(os.path.join(path, "frames", "*.gpcl")))
    if not files and not os.path.isdir(os.path.join(path, "frames")):
        raise FileNotFoundError(f"{path}: no frames/ directory")
    for f in files:
        yield read_cloud(f)


def _weights(args, cfg: PipelineConfig, which: str) -> str:
    path = getattr(args, f"{which}_weights", None) or cfg.resolve(getattr(cfg, f"{which}_weights"))
    if not path:
        raise ValueError(f"no {which} weights given (--{which}-weights or config)")
    return path


def _replay_manifest(args, cfg: PipelineConfig, command: str, n_frames: int) -> None:
    inputs = {"pose_weights": _weights(args, cfg, "pose"), "gesture_weights": _weights(args, cfg, "gesture")}
    if os.path.exists(os.path.join(args.stream, "stream.json")):
        inputs["stream"] = os.path.join(args.stream, "stream.json")
    seed = cfg.seed if args.seed is None else args.seed
    _run_manifest(str(args.out) + ".manifest.json", command, cfg, seed, inputs, frames=n_frames)


def _pipeline(args, cfg: PipelineConfig) -> GesturePipeline:
    posenet = M.load_model(_weights(args, cfg, "pose"), "pose")
    gesturenet = M.load_model(_weights(args, cfg, "gesture"), "gesture")
    params = PipelineParams(cluster=cfg.cluster, kalman=cfg.kalman, projection=cfg.projection,
                            filter=cfg.filter, rate=cfg.lidar.rate)
    return GesturePipeline(posenet, gesturenet, params)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simgen(args, cfg: PipelineConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed if args.seed is None else args.seed
    lidar = cfg.lidar
    if args.kind == "pose":
        subjects = sg.make_subjects(args.subjects, seed, first_id=args.first_subject)
        gen = sg.PoseGenConfig(augment=args.augment, keep_original=not args.transform_all)
        ds, man = sg.gen_pose_dataset(args.frames, subjects, seed, gen, lidar, cfg.projection, cfg.cluster)
        ds.save(out / "dataset.npz")
        man["files"] = ["dataset.npz"]
        man["config_sha256"] = cfg.digest()
        _write_json(out / "manifest.json", man)
        print(f"pose dataset: {len(ds)} samples from {args.frames} frames -> {out}")
    elif args.kind == "gesture":
        subjects = sg.make_subjects(args.subjects, seed, first_id=args.first_subject)
        ds, man = sg.gen_gesture_dataset(subjects, seed, args.seconds, args.rate or 30.0)
        files = []
        for i, (rec, name) in enumerate(zip(ds.recordings, ds.names)):
            fname = f"s{rec.subject:03d}_{i:04d}_{name}.csv"
            write_sequence_csv(out / fname, rec)
            files.append({"file": fname, "subject": rec.subject, "label": rec.label, "rate": rec.nominal_rate,
                          "transition": sg.is_transition(name)})
        ids = [s.id for s in subjects]
        half = len(ids) // 2
        man["files"] = files
        man["split"] = {"train": ids[:half], "test": ids[half:]}
        man["config_sha256"] = cfg.digest()
        _write_json(out / "manifest.json", man)
        print(f"gesture dataset: {len(files)} recordings ({man['gesture_recordings']} gesture, "
              f"{man['negative_recordings']} negative, {man['transition_recordings']} transition clips) -> {out}")
    else:
        subject = sg.make_subjects(1, seed, first_id=args.first_subject)[0]
        script = _parse_script(args.script)
        (out / "frames").mkdir(exist_ok=True)
        truth, leader = [], []
        clutter = [sg.pole(6.0, -3.0, lidar), sg.pole(-4.0, 5.0, lidar)]
        for i, fr in enumerate(sg.scenario_stream(script, subject, lidar, seed, distance=args.distance,
                                                  clutter=clutter)):
            write_cloud(out / "frames" / f"{i:06d}.gpcl", fr.cloud)
            truth.append(fr.gesture)
            leader.append([float(fr.root[0]), float(fr.root[1])])
        man = {"kind": "stream", "seed": seed, "rate": lidar.rate, "n_frames": len(truth), "script": script,
               "subject": sg.subject_record(subject), "truth": truth, "leader": leader,
               "config_sha256": cfg.digest()}
        _write_json(out / "stream.json", man)
        print(f"scan stream: {len(truth)} frames -> {out}")
    return EXIT_OK


def cmd_train(args, cfg: PipelineConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed if args.seed is None else args.seed
    if args.kind == "pose":
        man, ds = _load_pose_dataset(args.data, cfg)
        tc = M.TrainConfig(args.epochs or 20, args.lr, args.batch or 8, seed)
        res = M.train_posenet(ds.images, ds.labels, tc)
        sha = man["sha256"]
        extra = {}
    else:
        man, train, _ = _load_gesture_dataset(args.data)
        rate = float(args.rate or 30)
        x, y = M.sequence_dataset(train, rate, args.per_recording, seed, AugmentParams(),
                                  frame_noise=args.frame_noise)
        tc = M.TrainConfig(args.epochs or 30, args.lr, args.batch or 32, seed)
        res = M.train_gesturenet(x, y, tc)
        sha = M.array_digest(x, y)
        extra = {"rate": rate, "per_recording": args.per_recording, "frame_noise": args.frame_noise,
                 "source_dataset_sha256": man["sha256"], "train_subjects": man["split"]["train"]}
    M.save_model(out / "weights.gnnw", res.net)
    M.write_loss_csv(out / "loss.csv", res.history)
    mf = M.training_manifest(args.kind, tc, res, sha, config_sha256=cfg.digest(), **extra)
    _write_json(out / "manifest.json", mf)
    print(f"{args.kind} net trained: loss {res.initial_loss:.6g} -> {res.history[-1]:.6g}; weights in {out}")
    return EXIT_OK


def cmd_eval(args, cfg: PipelineConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed if args.seed is None else args.seed
    if args.sweep:
        man, _, _ = _load_gesture_dataset(args.data)
        subjects = [_subject_from_record(r) for r in man["subjects"] if r["id"] in man["split"]["test"]]
        posenet = M.load_model(_weights(args, cfg, "pose"), "pose")
        gesturenet = M.load_model(args.weights or _weights(args, cfg, "gesture"), "gesture")
        values = [float(v) for v in args.values.split(",")] if args.values else None
        rows = ev.run_sweep(args.sweep, posenet, gesturenet, subjects, seed, values, lidar=cfg.lidar,
                            repeats=args.repeats)
        ev.write_sweep_csv(out / f"sweep_{args.sweep}.csv", args.sweep, rows)
        _write_json(out / f"sweep_{args.sweep}.json",
                    {"sweep": args.sweep, "seed": seed, "repeats": args.repeats, "rows": [asdict(r) for r in rows],
                     "config_sha256": cfg.digest()})
        _run_manifest(out / "manifest.json", f"eval-sweep-{args.sweep}", cfg, seed,
                      {"pose_weights": _weights(args, cfg, "pose"),
                       "gesture_weights": args.weights or _weights(args, cfg, "gesture"),
                       "dataset": Path(args.data, "manifest.json")})
        for r in rows:
            print(f"{args.sweep}={r.value:g}: precision {r.precision:.3f} recall {r.recall:.3f}")
        return EXIT_OK
    if args.kind == "pose":
        _, ds = _load_pose_dataset(args.data, cfg)
        net = M.load_model(args.weights or _weights(args, cfg, "pose"), "pose")
        rep = M.eval_pose(net, ds)
        rep.write_csv(out / "pose_report.csv")
        _write_json(out / "pose_report.json", rep.to_json())
        _run_manifest(out / "manifest.json", "eval-pose", cfg, seed,
                      {"weights": args.weights or _weights(args, cfg, "pose"),
                       "dataset": Path(args.data, "manifest.json")})
        print(f"mean keypoint error {100 * rep.overall_mean:.2f} cm over {rep.count} samples")
        return EXIT_OK
    _, _, test = _load_gesture_dataset(args.data)
    rate = float(args.rate or 30)
    net = M.load_model(args.weights or _weights(args, cfg, "gesture"), "gesture")
    x, y, _ = M.window_dataset(test, rate, stride=0.1)
    rep = M.eval_gesture(net, x, y)
    rep.write_csv(out / "gesture_report.csv")
    _write_json(out / "gesture_report.json", rep.to_json() | {"rate": rate})
    _run_manifest(out / "manifest.json", "eval-gesture", cfg, seed,
                  {"weights": args.weights or _weights(args, cfg, "gesture"), "dataset": Path(args.data, "manifest.json")},
                  rate=rate)
    print(f"rate {rate:g} Hz: mean precision {rep.mean_precision:.3f}, mean recall {rep.mean_recall:.3f}")
    return EXIT_OK


def cmd_run_pipeline(args, cfg: PipelineConfig) -> int:
    pipe = _pipeline(args, cfg)
    results = [pipe.process(cloud) for cloud in _stream_frames(args.stream)]
    write_frame_log(args.out, results)
    _replay_manifest(args, cfg, "run-pipeline", len(results))
    if results:
        tot = np.array([r.latency["total"] for r in results]) * 1e3
        print(f"{len(results)} frames; latency median {np.median(tot):.1f} ms, p99 {np.percentile(tot, 99):.1f} ms")
    else:
        print("empty stream")
    return EXIT_OK


def cmd_teleop_replay(args, cfg: PipelineConfig) -> int:
    pipe = _pipeline(args, cfg)
    gmap = GestureMap.load(cfg.resolve(cfg.gesture_map))
    ctl = TeleopController(gmap, cfg.teleop, cfg.follow, cfg.vehicle)
    dt = 1.0 / cfg.lidar.rate
    for cloud in _stream_frames(args.stream):
        r = pipe.process(cloud)
        ctl.step(cloud.timestamp, r.active, r.track, dt)
    write_log_csv(args.out, ctl.log)
    _replay_manifest(args, cfg, "teleop-replay", len(ctl.log))
    modes = [row.mode for row in ctl.log]
    changes = [m for i, m in enumerate(modes) if i == 0 or m != modes[i - 1]]
    print(f"{len(modes)} frames; modes: {' -> '.join(changes) if changes else '(none)'}")
    return EXIT_OK


def cmd_gradcheck(args, cfg: PipelineConfig) -> int:
    rng = np.random.default_rng(cfg.seed if args.seed is None else args.seed)
    checks = []
    pose = M.build_posenet(1, M.PoseNetConfig(rows=32, cols=16), dtype=np.float64)
    x = rng.random((2, 32, 16, 1))
    checks.append(("posenet 32x16", grad_check(pose, x, rng.random((2, 24)), "mse", samples=args.samples)))
    if args.full:
        pose = M.build_posenet(1, dtype=np.float64)
        x = rng.random((1, 128, 64, 1))
        checks.append(("posenet 128x64", grad_check(pose, x, rng.random((1, 24)), "mse", samples=args.samples)))
    gest = M.build_gesturenet(1, dtype=np.float64)
    checks.append(("gesturenet T=10", grad_check(gest, rng.normal(size=(3, 10, 24)), np.array([0, 5, 18]), "ce",
                                                 samples=args.samples)))
    ok = True
    for name, res in checks:
        ok &= res.ok
        print(f"{name}: max rel error {res.max_rel_error:.3e} (worst {res.worst_param}) "
              f"{'PASS' if res.ok else 'FAIL'} [float64]")
    if not ok:
        raise ValidationFailure("gradient check failed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gesturepipe", description="Lidar gesture recognition and teleoperation.")
    ap.add_argument("--config", help=f"JSON config (default: ${ENV_VAR})")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simgen", help="generate synthetic datasets or scan streams")
    p.add_argument("--kind", choices=("pose", "gesture", "stream"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=3000)
    p.add_argument("--subjects", type=int, default=2)
    p.add_argument("--first-subject", type=int, default=0)
    p.add_argument("--augment", type=int, default=1)
    p.add_argument("--transform-all", action="store_true", help="transform every sample (no untouched originals)")
    p.add_argument("--seconds", type=float, default=6.0)
    p.add_argument("--rate", type=float, choices=(10.0, 30.0), default=None)
    p.add_argument("--script", default=DEFAULT_SCRIPT, help="gesture script 'id:seconds,...' for streams")
    p.add_argument("--distance", type=float, default=4.0)
    p.set_defaults(func=cmd_simgen)

    p = sub.add_parser("train", help="train the pose or gesture network")
    p.add_argument("--kind", choices=("pose", "gesture"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--rate", type=float, choices=(10.0, 30.0), default=None)
    p.add_argument("--per-recording", type=int, default=50)
    p.add_argument("--frame-noise", type=float, default=0.0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained network or run a sweep")
    p.add_argument("--kind", choices=("pose", "gesture"), default="gesture")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--weights")
    p.add_argument("--pose-weights")
    p.add_argument("--gesture-weights")
    p.add_argument("--rate", type=float, choices=(10.0, 30.0), default=None)
    p.add_argument("--sweep", choices=("distance", "rotation", "context"))
    p.add_argument("--repeats", type=int, default=3, help="recordings per subject and behaviour in a sweep")
    p.add_argument("--values", help="comma-separated sweep values (default: the full grid)")
    p.set_defaults(func=cmd_eval)

    for name, func, help_ in (("run-pipeline", cmd_run_pipeline, "run the full per-frame pipeline on a scan stream"),
                              ("teleop-replay", cmd_teleop_replay, "drive the simulated vehicle from a scan stream")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--stream", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--pose-weights")
        p.add_argument("--gesture-weights")
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check in float64")
    p.add_argument("--full", action="store_true", help="also check the full 128x64 posenet")
    p.add_argument("--samples", type=int, default=24, help="entries checked per parameter tensor")
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except ValidationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, ConfigError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
