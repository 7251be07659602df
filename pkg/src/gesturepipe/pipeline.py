"""Per-frame runtime: sweep -> person track -> depth image -> keypoints ->
gesture window -> raw class -> hysteresis filter."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import track as trk
from .cloud import ClusterParams, PointCloud, euclidean_cluster, remove_ground
from .models import MIN_SEQ_LEN, gesturenet_predict, posenet_predict
from .nncore import Network
from .poseseq import N_KEYPOINTS, Pose, PoseBuffer, interpolate, normalize_pose
from .postfilter import FilterParams, HysteresisFilter
from .project import ProjectionParams, decode_keypoints_view, from_view_frame, project_points

STAGES = ("segment", "track", "project", "pose", "gesture", "filter")


@dataclass(frozen=True)
class PipelineParams:
    cluster: ClusterParams = ClusterParams()
    kalman: trk.KalmanParams = trk.KalmanParams()
    projection: ProjectionParams = ProjectionParams()
    filter: FilterParams = FilterParams()
    rate: float = 10.0            # nominal sweep rate, Hz
    window_seconds: float = 1.0
    min_window_poses: int = 5     # fewer poses in the window -> no prediction
    person_height: tuple = (1.0, 2.4)  # accepted vertical extent of a new track's cluster, m
    person_width: float = 2.2     # max horizontal extent of a new track's cluster, m


@dataclass
class FrameResult:
    t: float
    n_points: int
    n_clusters: int
    track: tuple | None           # (x, y) of the user track
    track_status: str
    keypoints: np.ndarray | None  # (8, 3) sensor frame
    raw: int                      # classifier argmax (0 when no prediction)
    confidence: float
    active: int | None
    latency: dict = field(default_factory=dict)  # seconds per stage + "total"


def window_features(times, poses, now: float, n_frames: int, seconds: float = 1.0,
                    min_poses: int = 2) -> np.ndarray | None:
    """Normalized (n_frames, 24) features for the window (now - seconds, now].

    If frames are missing (tracking dropouts) the available poses are
    linearly re-sampled onto the nominal grid; returns None when fewer than
    ``min_poses`` poses fall in the window.
    """
    from .poseseq import PoseSequence

    times = np.asarray(times, dtype=np.float64)
    keep = (times > now - seconds + 1e-9) & (times <= now + 1e-9)
    if keep.sum() < max(min_poses, 2):
        return None
    pts = np.asarray(poses)[keep]
    ts = times[keep]
    if len(ts) == n_frames:
        return normalize_pose(pts)
    grid = now - seconds + seconds * np.arange(1, n_frames + 1) / n_frames
    return normalize_pose(interpolate(PoseSequence(pts, ts), grid))


class GesturePipeline:
    def __init__(self, posenet: Network, gesturenet: Network, params: PipelineParams = PipelineParams()):
        self.posenet, self.gesturenet, self.params = posenet, gesturenet, params
        self.track: trk.TrackState | None = None
        self.buffer = PoseBuffer(horizon=2 * params.window_seconds)
        self.filter = HysteresisFilter(params.filter)
        self.n_frames = max(MIN_SEQ_LEN, int(round(params.window_seconds * params.rate)))

    def reset(self) -> None:
        self.track = None
        self.buffer.clear()
        self.filter.reset()

    def _pick_new(self, cloud: PointCloud, clusters, cents) -> int | None:
        p = self.params
        best, best_d = None, np.inf
        for i, c in enumerate(clusters):
            pts = cloud.points[c.indices]
            height = float(pts[:, 2].max() - pts[:, 2].min())
            width = float(np.hypot(*(pts[:, :2].max(axis=0) - pts[:, :2].min(axis=0))))
            d = float(np.hypot(cents[i, 0], cents[i, 1]))
            if p.person_height[0] <= height <= p.person_height[1] and width <= p.person_width and d < best_d:
                best, best_d = i, d
        return best

    def process(self, cloud: PointCloud) -> FrameResult:
        p = self.params
        lat = {}
        t0 = tic = time.perf_counter()
        t = cloud.timestamp

        keep = remove_ground(cloud, p.cluster)
        clusters = euclidean_cluster(cloud, p.cluster, keep)
        cents = np.array([cloud.points[c.indices].astype(np.float64).mean(axis=0) for c in clusters]).reshape(-1, 3)
        lat["segment"], tic = time.perf_counter() - tic, time.perf_counter()

        chosen = None
        if self.track is not None and self.track.status != trk.TrackStatus.LOST:
            self.track = trk.predict_to(self.track, t)
            chosen = trk.associate(self.track, cents)
            if chosen is None:
                self.track = trk.mark_missed(self.track)
            else:
                self.track = trk.update(self.track, cents[chosen])
        if self.track is None or self.track.status == trk.TrackStatus.LOST:
            chosen = self._pick_new(cloud, clusters, cents)
            if chosen is not None:
                self.track = trk.init_track(cents[chosen], t, p.kalman)
                self.buffer.clear()
        lat["track"], tic = time.perf_counter() - tic, time.perf_counter()

        keypoints = None
        img = None
        if chosen is not None:
            img = project_points(cloud.points[clusters[chosen].indices], t, p.projection)
        lat["project"], tic = time.perf_counter() - tic, time.perf_counter()

        if img is not None:
            view = decode_keypoints_view(posenet_predict(self.posenet, img).reshape(-1), img)
            keypoints = from_view_frame(view, img.bearing)
            self.buffer.push(Pose(view, t))
        lat["pose"], tic = time.perf_counter() - tic, time.perf_counter()

        raw, conf = 0, 0.0
        times, poses = self.buffer.arrays()
        if len(times):
            feats = window_features(times, poses, t, self.n_frames, p.window_seconds, p.min_window_poses)
            if feats is not None:
                probs = gesturenet_predict(self.gesturenet, feats)
                raw, conf = int(np.argmax(probs)), float(np.max(probs))
        lat["gesture"], tic = time.perf_counter() - tic, time.perf_counter()

        active = self.filter.push(raw)
        lat["filter"] = time.perf_counter() - tic
        lat["total"] = time.perf_counter() - t0

        tr = None if self.track is None else (float(self.track.mean[0]), float(self.track.mean[1]))
        status = "none" if self.track is None else self.track.status.value
        return FrameResult(t, len(cloud), len(clusters), tr, status, keypoints, raw, conf, active, lat)


LOG_HEADER = (["frame", "t", "n_points", "n_clusters", "track_x", "track_y", "track_status"]
              + [f"kp{k}{a}" for k in range(N_KEYPOINTS) for a in "xyz"]
              + ["raw_class", "confidence", "active_class"]
              + [f"lat_{s}_ms" for s in STAGES] + ["lat_total_ms"])


def write_frame_log(path, results) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_HEADER)
        for i, r in enumerate(results):
            tx, ty = r.track if r.track is not None else ("", "")
            kps = r.keypoints.reshape(-1).tolist() if r.keypoints is not None else [""] * (3 * N_KEYPOINTS)
            w.writerow([i, f"{r.t:.6f}", r.n_points, r.n_clusters, tx, ty, r.track_status]
                       + [f"{v:.4f}" if v != "" else "" for v in kps]
                       + [r.raw, f"{r.confidence:.4f}", 0 if r.active is None else r.active]
                       + [f"{1e3 * r.latency.get(s, 0.0):.3f}" for s in STAGES]
                       + [f"{1e3 * r.latency['total']:.3f}"])
