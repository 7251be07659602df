"""Benchmarks that mirror the reported experiments on synthetic data.

* ground-truth keypoints at 30 Hz (stands in for the stereo labeler),
* keypoints estimated from rendered 10 Hz lidar sweeps by the pose CNN,
* sweeps over subject distance, torso rotation and filter context time.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .cloud import ClusterParams
from .models import N_CLASSES, GestureReport, confusion_report, gesturenet_predict, posenet_predict
from .nncore import Network
from .pipeline import window_features
from .postfilter import FilterParams, filter_stream
from .project import ProjectionParams, decode_keypoints_view, project_points
from .simgen import (GESTURES, NEGATIVES, GestureTemplate, LidarModel, Subject, body_capsules, extract_person,
                     joints_at, place, render_scan)

SWEEP_VALUES = {
    "distance": tuple(float(d) for d in range(2, 13)),
    "rotation": (0.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0),
    "context": tuple(round(0.1 * k, 1) for k in range(3, 21)),
}


@dataclass(frozen=True)
class LidarEvalConfig:
    distance: float = 4.0
    rotation_deg: float = 10.0     # uniform in +-rotation_deg unless fixed_rotation
    fixed_rotation: bool = False    # use exactly rotation_deg (random sign)
    seconds: float = 6.0
    lidar: LidarModel = LidarModel()
    projection: ProjectionParams = ProjectionParams()
    cluster: ClusterParams = ClusterParams()


@dataclass
class LidarRecording:
    label: int
    subject: int
    times: np.ndarray      # (T,)
    keypoints: np.ndarray  # (T, 8, 3) view frame, NaN where no person cluster was found


def templates_for_eval() -> list[GestureTemplate]:
    return list(NEGATIVES) + [GESTURES[i] for i in range(1, 19)]


def lidar_recording(posenet: Network, template: GestureTemplate, subject: Subject, seed,
                    cfg: LidarEvalConfig = LidarEvalConfig()) -> LidarRecording:
    """Render a gesture performance at the lidar rate and estimate keypoints
    frame by frame with the pose CNN."""
    rng = np.random.default_rng(seed)
    lidar = cfg.lidar
    n = int(round(cfg.seconds * lidar.rate))
    times = np.arange(n) / lidar.rate
    period = template.period * subject.style.period_scale
    phase0 = rng.uniform()
    bearing = rng.uniform(-math.pi, math.pi)
    if cfg.fixed_rotation:
        rot = math.radians(cfg.rotation_deg) * (1 if rng.uniform() < 0.5 else -1)
    else:
        rot = math.radians(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
    root, yaw = place(cfg.distance, bearing, rot, lidar)
    imgs, ok = [], np.zeros(n, dtype=bool)
    for k, t in enumerate(times):
        joints = joints_at(template, (phase0 + t / period) % 1.0, subject.skeleton, root, yaw, subject.style)
        cloud = render_scan(body_capsules(joints, subject.skeleton), lidar, rng, timestamp=t)
        pts = extract_person(cloud, root[:2], cfg.cluster)
        if pts is not None:
            imgs.append(project_points(pts, t, cfg.projection))
            ok[k] = True
    kps = np.full((n, 8, 3), np.nan)
    if imgs:
        pred = posenet_predict(posenet, np.stack([im.pixels for im in imgs]))
        kps[ok] = np.stack([decode_keypoints_view(p.reshape(-1), im) for p, im in zip(pred, imgs)])
    return LidarRecording(template.id, subject.id, times, kps)


def lidar_benchmark(posenet: Network, subjects: list[Subject], seed: int,
                    cfg: LidarEvalConfig = LidarEvalConfig(), repeats: int = 1) -> list[LidarRecording]:
    """Every behaviour for every subject, ``repeats`` times with fresh
    bearing, phase and rotation draws."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    out = []
    for subj in subjects:
        for k, tmpl in enumerate(templates_for_eval()):
            for rep in range(repeats):
                key = [seed, subj.id, k] if rep == 0 else [seed, subj.id, k, rep]
                out.append(lidar_recording(posenet, tmpl, subj, key, cfg))
    return out


def stream_predictions(gesturenet: Network, rec: LidarRecording, rate: float, window: float = 1.0,
                       min_poses: int = 5) -> np.ndarray:
    """Raw class per frame (0 until a window can be formed), computed the
    same way as the runtime pipeline."""
    n_frames = max(10, int(round(window * rate)))
    valid = ~np.isnan(rec.keypoints[:, 0, 0])
    feats, where = [], []
    for k, t in enumerate(rec.times):
        if t + 1e-9 < (n_frames - 1) / rate:
            continue
        sel = valid & (rec.times <= t + 1e-9)
        f = window_features(rec.times[sel], rec.keypoints[sel], t, n_frames, window, min_poses)
        if f is not None:
            feats.append(f)
            where.append(k)
    raw = np.zeros(len(rec.times), dtype=np.int64)
    if feats:
        raw[where] = gesturenet_predict(gesturenet, np.stack(feats)).argmax(axis=1)
    return raw


def raw_report(gesturenet: Network, recs: list[LidarRecording], rate: float) -> GestureReport:
    """Unfiltered per-window metrics; frames before the first full window
    are excluded."""
    n_frames = max(10, int(round(rate)))
    truth, pred = [], []
    for rec in recs:
        raw = stream_predictions(gesturenet, rec, rate)
        start = n_frames - 1
        truth.append(np.full(len(raw) - start, rec.label))
        pred.append(raw[start:])
    return confusion_report(np.concatenate(truth), np.concatenate(pred))


def filtered_report(raw_streams, labels, params: FilterParams, warmup: int) -> GestureReport:
    """Metrics of the hysteresis output on frames from ``warmup`` on."""
    truth, pred = [], []
    for raw, label in zip(raw_streams, labels):
        if len(raw) <= warmup:
            raise ValueError(f"recording of {len(raw)} frames is not longer than the {warmup}-frame warm-up")
        active = filter_stream(raw, params)
        out = np.array([0 if a is None else a for a in active], dtype=np.int64)
        truth.append(np.full(len(out) - warmup, label))
        pred.append(out[warmup:])
    return confusion_report(np.concatenate(truth), np.concatenate(pred), N_CLASSES)


def context_filter(seconds: float, rate: float = 10.0) -> FilterParams:
    """Filter whose buffer spans ``seconds``; thresholds keep the default
    6/10 and 3/10 ratios."""
    n = max(2, int(round(seconds * rate)))
    on = max(2, math.ceil(0.6 * n))
    off = min(max(1, math.floor(0.3 * n)), on - 1)
    return FilterParams(n, on, off)


@dataclass
class SweepRow:
    value: float
    precision: float
    recall: float
    raw_precision: float
    raw_recall: float


def run_sweep(kind: str, posenet: Network, gesturenet: Network, subjects: list[Subject], seed: int,
              values=None, seconds: float | None = None, lidar: LidarModel = LidarModel(),
              repeats: int = 1) -> list[SweepRow]:
    """Filtered and raw mean precision/recall over the 18 gestures versus
    ``kind`` in {"distance", "rotation", "context"}."""
    if kind not in SWEEP_VALUES:
        raise ValueError(f"unknown sweep {kind!r}")
    values = SWEEP_VALUES[kind] if values is None else values
    rate = lidar.rate
    warm_default = 10 + int(round(rate)) - 2  # classifier window + filter buffer
    rows = []
    if kind == "context":
        cfg = LidarEvalConfig(seconds=seconds or 10.0, lidar=lidar)
        recs = lidar_benchmark(posenet, subjects, seed, cfg, repeats)
        raws = [stream_predictions(gesturenet, r, rate) for r in recs]
        labels = [r.label for r in recs]
        raw_rep = raw_report(gesturenet, recs, rate)
        for v in values:
            fp = context_filter(v, rate)
            warm = int(round(rate)) - 1 + fp.buffer_len - 1
            rep = filtered_report(raws, labels, fp, warm)
            rows.append(SweepRow(float(v), rep.mean_precision, rep.mean_recall,
                                 raw_rep.mean_precision, raw_rep.mean_recall))
        return rows
    for v in values:
        if kind == "distance":
            cfg = LidarEvalConfig(distance=float(v), seconds=seconds or 4.0, lidar=lidar)
        else:
            cfg = LidarEvalConfig(rotation_deg=float(v), fixed_rotation=True, seconds=seconds or 4.0, lidar=lidar)
        recs = lidar_benchmark(posenet, subjects, seed, cfg, repeats)
        raws = [stream_predictions(gesturenet, r, rate) for r in recs]
        rep = filtered_report(raws, [r.label for r in recs], FilterParams(), warm_default)
        raw_rep = raw_report(gesturenet, recs, rate)
        rows.append(SweepRow(float(v), rep.mean_precision, rep.mean_recall, raw_rep.mean_precision, raw_rep.mean_recall))
    return rows


def write_sweep_csv(path, kind: str, rows: list[SweepRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([kind, "precision", "recall", "raw_precision", "raw_recall"])
        for r in rows:
            w.writerow([r.value, f"{r.precision:.6f}", f"{r.recall:.6f}", f"{r.raw_precision:.6f}", f"{r.raw_recall:.6f}"])
