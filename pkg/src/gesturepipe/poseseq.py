"""Body poses, pose sequences, feature normalization and sequence augmentation.

A pose is 8 keypoints in a fixed order (see ``KEYPOINTS``). Sequences are
stored as dense arrays: ``points`` (T, 8, 3) and ``timestamps`` (T,).
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

KEYPOINTS = ("hip_r", "hip_l", "shoulder_r", "shoulder_l", "elbow_r", "elbow_l", "wrist_r", "wrist_l")
N_KEYPOINTS = len(KEYPOINTS)
N_FEATURES = 3 * N_KEYPOINTS
HIP_R, HIP_L, SHOULDER_R, SHOULDER_L, ELBOW_R, ELBOW_L, WRIST_R, WRIST_L = range(8)

WINDOW_SECONDS = 1.0
_TIME_EPS = 1e-9


class DegenerateSkeletonError(ValueError):
    pass


@dataclass
class Pose:
    points: np.ndarray  # (8, 3) meters
    timestamp: float = 0.0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(N_KEYPOINTS, 3)
        if not np.isfinite(self.points).all():
            raise ValueError("pose coordinates must be finite")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.points[KEYPOINTS.index(name)]


@dataclass
class PoseSequence:
    points: np.ndarray       # (T, 8, 3)
    timestamps: np.ndarray   # (T,)
    nominal_rate: float = 30.0
    label: int | None = None
    subject: int | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, N_KEYPOINTS, 3)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
        if len(self.points) != len(self.timestamps):
            raise ValueError("points and timestamps differ in length")
        if len(self.timestamps) > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def duration(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0]) if len(self) else 0.0

    def poses(self):
        return [Pose(p, t) for p, t in zip(self.points, self.timestamps)]

    def features(self) -> np.ndarray:
        return normalize_pose(self.points)


def normalize_pose(points) -> np.ndarray:
    """Center on the hip midpoint and divide by the mean shoulder-to-hip
    distance. Accepts (..., 8, 3) and returns (..., 24), x/y/z interleaved
    per keypoint in ``KEYPOINTS`` order."""
    if isinstance(points, Pose):
        points = points.points
    p = np.asarray(points, dtype=np.float64)
    center = 0.5 * (p[..., HIP_R, :] + p[..., HIP_L, :])
    ref = 0.5 * (
        np.linalg.norm(p[..., SHOULDER_R, :] - p[..., HIP_R, :], axis=-1)
        + np.linalg.norm(p[..., SHOULDER_L, :] - p[..., HIP_L, :], axis=-1)
    )
    if np.any(ref <= 0.01):
        raise DegenerateSkeletonError("shoulder-hip reference distance <= 1 cm")
    out = (p - center[..., None, :]) / ref[..., None, None]
    return out.reshape(*p.shape[:-2], N_FEATURES)


class PoseBuffer:
    """Time-ordered pose history, pruned to a little over one window."""

    def __init__(self, horizon: float = 2.0):
        self.horizon = horizon
        self._items: deque[tuple[float, np.ndarray]] = deque()

    def __len__(self) -> int:
        return len(self._items)

    def push(self, pose: Pose) -> None:
        if self._items and pose.timestamp <= self._items[-1][0]:
            raise ValueError("poses must arrive in increasing time order")
        self._items.append((pose.timestamp, pose.points))
        while self._items and self._items[0][0] < pose.timestamp - self.horizon:
            self._items.popleft()

    def clear(self) -> None:
        self._items.clear()

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Timestamps (T,) and points (T, 8, 3) currently held."""
        if not self._items:
            return np.empty(0), np.empty((0, N_KEYPOINTS, 3))
        ts, pts = zip(*self._items)
        return np.array(ts), np.stack(pts)

    def window(self, now: float, seconds: float = WINDOW_SECONDS, rate: float = 10.0) -> PoseSequence:
        return window(self._items, now, seconds, rate)


def window(buffer, now: float, seconds: float = WINDOW_SECONDS, rate: float = 10.0) -> PoseSequence:
    """Poses with timestamp in (now - seconds, now]; ``buffer`` is a
    time-ordered iterable of ``(t, points)`` pairs or :class:`Pose`."""
    items = [(b.timestamp, b.points) if isinstance(b, Pose) else b for b in buffer]
    lo = now - seconds + _TIME_EPS
    kept = [(t, p) for t, p in items if lo < t <= now + _TIME_EPS]
    if not kept:
        return PoseSequence(np.empty((0, N_KEYPOINTS, 3)), np.empty(0), rate)
    ts, pts = zip(*kept)
    return PoseSequence(np.stack(pts), np.array(ts), rate)


def interpolate(seq: PoseSequence, times) -> np.ndarray:
    """Linearly interpolate keypoints at ``times`` (clamped to the sequence span)."""
    times = np.asarray(times, dtype=np.float64)
    t = seq.timestamps
    idx = np.clip(np.searchsorted(t, times, side="right") - 1, 0, len(t) - 2)
    span = t[idx + 1] - t[idx]
    a = np.clip((times - t[idx]) / span, 0.0, 1.0)[:, None, None]
    return (1 - a) * seq.points[idx] + a * seq.points[idx + 1]


def resample(seq: PoseSequence, target_rate: float) -> PoseSequence:
    """Uniform timestamps at ``target_rate`` spanning the original interval."""
    if len(seq) < 2:
        raise ValueError("need at least 2 poses to resample")
    n = int(np.floor(seq.duration * target_rate + 1e-6)) + 1
    times = seq.timestamps[0] + np.arange(n) / target_rate
    return replace(seq, points=interpolate(seq, times), timestamps=times, nominal_rate=target_rate)


@dataclass(frozen=True)
class AugmentParams:
    time_scale: tuple[float, float] = (0.7, 1.3)
    noise_std: float = 0.02
    yaw: tuple[float, float] = (-np.radians(15), np.radians(15))
    translation: tuple[float, float] = (-1.0, 1.0)
    size_scale: tuple[float, float] = (0.9, 1.1)

    def __post_init__(self):
        for name in ("time_scale", "yaw", "translation", "size_scale"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range is not ordered")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.time_scale[0] <= 0 or self.size_scale[0] <= 0:
            raise ValueError("scale factors must be positive")

    @classmethod
    def identity(cls) -> "AugmentParams":
        return cls((1.0, 1.0), 0.0, (0.0, 0.0), (0.0, 0.0), (1.0, 1.0))


def _uniform(rng, lo_hi):
    lo, hi = lo_hi
    return lo if lo == hi else rng.uniform(lo, hi)


def rigid_transform(points, yaw: float, translation, scale: float, center) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return (points - center) @ rot.T * scale + center + translation


def augment_sequence(seq: PoseSequence, params: AugmentParams, seed, out_rate: float | None = None,
                     seconds: float = WINDOW_SECONDS) -> PoseSequence:
    """Sample a window with a random time scale, add one constant noise offset
    per keypoint, then rotate/translate/scale every frame rigidly.

    The output has ``round(seconds * out_rate)`` frames at ``out_rate``
    (default: the input's nominal rate). A time scale above 1 covers more of
    the source than the window length (frames dropped), below 1 less
    (frames interpolated).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    rate = out_rate or seq.nominal_rate
    n_out = int(round(seconds * rate))
    if len(seq) < 2:
        raise ValueError("need at least 2 poses to augment")
    scale_t = _uniform(rng, params.time_scale)
    span = scale_t * (n_out - 1) / rate
    if span > seq.duration:
        span = seq.duration
        scale_t = span * rate / max(n_out - 1, 1)
    start = seq.timestamps[0] + _uniform(rng, (0.0, seq.duration - span))
    src_times = start + scale_t * np.arange(n_out) / rate
    pts = interpolate(seq, src_times)

    if params.noise_std > 0:
        pts = pts + rng.normal(0.0, params.noise_std, size=(1, N_KEYPOINTS, 3))

    yaw = _uniform(rng, params.yaw)
    shift = np.array([_uniform(rng, params.translation), _uniform(rng, params.translation), 0.0])
    size = _uniform(rng, params.size_scale)
    center = pts[:, [HIP_R, HIP_L]].mean(axis=(0, 1))
    pts = rigid_transform(pts, yaw, shift, size, center)
    times = start + np.arange(n_out) / rate
    return PoseSequence(pts, times, rate, seq.label, seq.subject)


# ---------------------------------------------------------------------------
# CSV format: t,label,kp0x,kp0y,kp0z,...,kp7z
# ---------------------------------------------------------------------------

CSV_HEADER = ["t", "label"] + [f"kp{k}{a}" for k in range(N_KEYPOINTS) for a in "xyz"]


def write_sequence_csv(path, seq: PoseSequence) -> None:
    label = "" if seq.label is None else str(seq.label)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for t, p in zip(seq.timestamps, seq.points):
            w.writerow([repr(float(t)), label] + [repr(float(v)) for v in p.reshape(-1)])


def read_sequence_csv(path, nominal_rate: float = 30.0, subject: int | None = None) -> PoseSequence:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != CSV_HEADER:
        raise ValueError(f"{path}: unexpected pose CSV header")
    body = rows[1:]
    if any(len(r) != len(CSV_HEADER) for r in body):
        raise ValueError(f"{path}: wrong column count")
    labels = {r[1] for r in body}
    if len(labels) > 1:
        raise ValueError(f"{path}: mixed labels in one sequence")
    label = labels.pop() if labels else ""
    t = np.array([float(r[0]) for r in body])
    pts = np.array([[float(v) for v in r[2:]] for r in body]).reshape(-1, N_KEYPOINTS, 3)
    return PoseSequence(pts, t, nominal_rate, int(label) if label else None, subject)
