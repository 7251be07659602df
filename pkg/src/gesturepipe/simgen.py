"""Synthetic humans, gestures and lidar sweeps.

A subject is a capsule body driven by per-arm joint angles. Gesture
templates map a phase in [0, 1] to those angles; static templates ignore
the phase. Sweeps are produced by casting the lidar's beam pattern against
the body capsules (and optionally a ground plane and clutter).

Arm angles are ``(alpha_upper, beta_upper, alpha_fore, beta_fore)`` in
degrees. ``alpha`` is the elevation from hanging straight down (0) through
horizontal (90) to straight up (180); values past 180 continue over the top
toward the body midline. ``beta`` swings the segment from sideways-out (0)
to forward (90); 180 points inward.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable, Iterator

import numpy as np

from . import kernels
from .cloud import ClusterParams, PointCloud, euclidean_cluster, remove_ground
from .poseseq import N_KEYPOINTS, PoseSequence
from .project import (ClusterTransform, ProjectionParams, augment_cluster, encode_keypoints,
                      project_points, to_view_frame)

log = logging.getLogger(__name__)

N_GESTURES = 18
N_CLASSES = N_GESTURES + 1  # class 0 is "no gesture"
STATIC_IDS = tuple(range(1, 13))
DYNAMIC_IDS = tuple(range(13, 19))

# ---------------------------------------------------------------------------
# body model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SkeletonModel:
    height: float = 1.75
    hip_height: float = 0.91
    torso: float = 0.51
    shoulder_half: float = 0.2275
    hip_half: float = 0.096
    upper_arm: float = 0.325
    forearm: float = 0.255
    head_radius: float = 0.11
    torso_radius: float = 0.12
    upper_arm_radius: float = 0.05
    forearm_radius: float = 0.04
    leg_radius: float = 0.075

    def __post_init__(self):
        if min(asdict(self).values()) <= 0:
            raise ValueError("skeleton dimensions must be positive")

    @classmethod
    def from_height(cls, height: float, rng: np.random.Generator | None = None, jitter: float = 0.05):
        """Proportions scaled from ``height``; with ``rng`` each segment is
        jittered by up to +-``jitter`` (relative)."""

        def j():
            return 1.0 if rng is None else rng.uniform(1 - jitter, 1 + jitter)

        s = height / 1.75
        return cls(
            height=height,
            hip_height=0.52 * height * j(),
            torso=0.29 * height * j(),
            shoulder_half=0.13 * height * j(),
            hip_half=0.055 * height * j(),
            upper_arm=0.186 * height * j(),
            forearm=0.146 * height * j(),
            head_radius=0.11 * s,
            torso_radius=0.12 * s * j(),
            upper_arm_radius=0.05 * s,
            forearm_radius=0.04 * s,
            leg_radius=0.075 * s,
        )


@dataclass(frozen=True)
class SubjectStyle:
    """Per-subject way of performing gestures."""

    angle_offsets: tuple = (0.0,) * 8  # degrees, right arm then left arm
    amplitude: float = 1.0
    period_scale: float = 1.0


@dataclass(frozen=True)
class Subject:
    id: int
    skeleton: SkeletonModel
    style: SubjectStyle = SubjectStyle()


def make_subjects(n: int, seed: int, first_id: int = 0, height_range=(1.55, 1.95)) -> list[Subject]:
    out = []
    for k in range(n):
        rng = np.random.default_rng([seed, first_id + k, 7])
        height = rng.uniform(*height_range)
        skel = SkeletonModel.from_height(height, rng)
        style = SubjectStyle(tuple(rng.normal(0.0, 5.0, size=8)), rng.uniform(0.8, 1.2), rng.uniform(0.85, 1.15))
        out.append(Subject(first_id + k, skel, style))
    return out


# ---------------------------------------------------------------------------
# gesture templates
# ---------------------------------------------------------------------------

ArmAngles = tuple  # (alpha_u, beta_u, alpha_f, beta_f), degrees

DOWN = (8.0, 0.0, 5.0, 0.0)
SIDE = (90.0, 0.0, 90.0, 0.0)
UP = (170.0, 0.0, 175.0, 0.0)
FORWARD = (90.0, 90.0, 90.0, 90.0)
GOALPOST = (90.0, 0.0, 180.0, 0.0)
DIAG_UP = (135.0, 0.0, 135.0, 0.0)
DIAG_DOWN = (45.0, 0.0, 45.0, 0.0)
CHEST = (25.0, 60.0, 95.0, 170.0)
AKIMBO = (40.0, 0.0, 45.0, 180.0)


@dataclass(frozen=True)
class GestureTemplate:
    """``arms(phase, amplitude)`` returns ``(right, left, leg_swing_deg)``."""

    id: int
    name: str
    kind: str  # "static" | "dynamic"
    period: float  # seconds per cycle (nominal duration of one repetition)
    arms: Callable = field(repr=False, compare=False)


def _static(right, left):
    return lambda phase, amp: (right, left, 0.0)


def _sin(phase):
    return np.sin(2 * np.pi * phase)


def _wave_one(phase, amp):
    return (160.0, 0.0, 170.0 + 28.0 * amp * _sin(phase), 0.0), DOWN, 0.0


def _wave_two(phase, amp):
    a = 168.0 + 30.0 * amp * _sin(phase)
    return (150.0, 0.0, a, 0.0), (150.0, 0.0, a, 0.0), 0.0


def _sweep_right(phase, amp):
    b = 45.0 - 45.0 * amp * np.cos(2 * np.pi * phase)
    return (90.0, b, 90.0, b), DOWN, 0.0


def _sweep_left(phase, amp):
    b = 45.0 - 45.0 * amp * np.cos(2 * np.pi * phase)
    return DOWN, (90.0, b, 90.0, b), 0.0


def _pump(phase, amp):
    a = 135.0 + 40.0 * amp * _sin(phase)
    return (100.0, 0.0, a, 0.0), (100.0, 0.0, a, 0.0), 0.0


def _circle(phase, amp):
    a = (360.0 * phase + 90.0) % 360.0
    return (a, 30.0, a, 30.0), DOWN, 0.0


def _walk(phase, amp):
    s = 25.0 * amp * _sin(phase)
    return (s, 90.0, s + 5.0, 90.0), (-s, 90.0, -s + 5.0, 90.0), 20.0 * _sin(phase)


GESTURES: dict[int, GestureTemplate] = {
    t.id: t
    for t in [
        GestureTemplate(1, "right_arm_up", "static", 1.0, _static(UP, DOWN)),
        GestureTemplate(2, "left_arm_up", "static", 1.0, _static(DOWN, UP)),
        GestureTemplate(3, "both_arms_up", "static", 1.0, _static(UP, UP)),
        GestureTemplate(4, "right_arm_side", "static", 1.0, _static(SIDE, DOWN)),
        GestureTemplate(5, "left_arm_side", "static", 1.0, _static(DOWN, SIDE)),
        GestureTemplate(6, "both_arms_side", "static", 1.0, _static(SIDE, SIDE)),
        GestureTemplate(7, "right_arm_forward", "static", 1.0, _static(FORWARD, DOWN)),
        GestureTemplate(8, "both_arms_forward", "static", 1.0, _static(FORWARD, FORWARD)),
        GestureTemplate(9, "goalpost", "static", 1.0, _static(GOALPOST, GOALPOST)),
        GestureTemplate(10, "diagonal", "static", 1.0, _static(DIAG_UP, DIAG_DOWN)),
        GestureTemplate(11, "low_v", "static", 1.0, _static(DIAG_DOWN, DIAG_DOWN)),
        GestureTemplate(12, "hand_on_chest", "static", 1.0, _static(CHEST, DOWN)),
        GestureTemplate(13, "wave_one_arm", "dynamic", 1.0, _wave_one),
        GestureTemplate(14, "wave_two_arms", "dynamic", 1.2, _wave_two),
        GestureTemplate(15, "sweep_right", "dynamic", 1.5, _sweep_right),
        GestureTemplate(16, "sweep_left", "dynamic", 1.5, _sweep_left),
        GestureTemplate(17, "pump", "dynamic", 0.8, _pump),
        GestureTemplate(18, "circle", "dynamic", 1.6, _circle),
    ]
}

NEGATIVES: tuple[GestureTemplate, ...] = (
    GestureTemplate(0, "neutral", "static", 1.0, _static(DOWN, DOWN)),
    GestureTemplate(0, "walk_in_place", "dynamic", 1.1, _walk),
    GestureTemplate(0, "akimbo", "static", 1.0, _static(AKIMBO, AKIMBO)),
)


def all_templates() -> list[GestureTemplate]:
    return list(NEGATIVES) + [GESTURES[i] for i in range(1, N_GESTURES + 1)]


def random_arm_template(rng: np.random.Generator) -> GestureTemplate:
    """A static template with arbitrary (anatomically loose) arm angles."""

    def arm():
        au = rng.uniform(0.0, 180.0)
        bu = rng.uniform(-30.0, 120.0)
        return (au, bu, min(au + rng.uniform(-20.0, 110.0), 200.0), bu + rng.uniform(-20.0, 60.0))

    return GestureTemplate(0, "random", "static", 1.0, _static(arm(), arm()))


# ---------------------------------------------------------------------------
# kinematics
# ---------------------------------------------------------------------------


def _direction(alpha, beta, out, fwd, up=np.array([0.0, 0.0, 1.0])):
    a, b = np.radians(alpha), np.radians(beta)
    return -np.cos(a) * up + np.sin(a) * (np.cos(b) * out + np.sin(b) * fwd)


def joints_at(template: GestureTemplate, phase: float, skeleton: SkeletonModel, root=(0.0, 0.0, 0.0),
              yaw: float = 0.0, style: SubjectStyle = SubjectStyle(), jitter=None) -> dict[str, np.ndarray]:
    """All joint positions in the world frame (8 keypoints + head + feet).

    ``jitter`` optionally adds 8 more arm-angle offsets (degrees) on top of
    the subject style.
    """
    if not 0.0 <= phase <= 1.0:
        raise ValueError(f"phase must be in [0, 1], got {phase}")
    right, left, leg = template.arms(phase, style.amplitude)
    off = np.asarray(style.angle_offsets, dtype=np.float64)
    if jitter is not None:
        off = off + np.asarray(jitter, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64) + off[:4]
    left = np.asarray(left, dtype=np.float64) + off[4:]
    s = skeleton
    fwd = np.array([1.0, 0.0, 0.0])
    lat = np.array([0.0, 1.0, 0.0])
    up = np.array([0.0, 0.0, 1.0])
    j = {
        "hip_r": np.array([0.0, -s.hip_half, s.hip_height]),
        "hip_l": np.array([0.0, s.hip_half, s.hip_height]),
        "shoulder_r": np.array([0.0, -s.shoulder_half, s.hip_height + s.torso]),
        "shoulder_l": np.array([0.0, s.shoulder_half, s.hip_height + s.torso]),
    }
    for side, ang, out in (("r", right, -lat), ("l", left, lat)):
        elbow = j[f"shoulder_{side}"] + s.upper_arm * _direction(ang[0], ang[1], out, fwd)
        j[f"elbow_{side}"] = elbow
        j[f"wrist_{side}"] = elbow + s.forearm * _direction(ang[2], ang[3], out, fwd)
    neck = max(s.height - s.hip_height - s.torso - s.head_radius, s.head_radius * 0.5)
    j["head"] = np.array([0.0, 0.0, s.hip_height + s.torso + neck])
    swing = np.radians(leg)
    for side, sign in (("r", 1.0), ("l", -1.0)):
        d = -np.cos(swing) * up + sign * np.sin(swing) * fwd
        j[f"foot_{side}"] = j[f"hip_{side}"] + s.hip_height * d
    c, sn = np.cos(yaw), np.sin(yaw)
    rot = np.array([[c, -sn, 0.0], [sn, c, 0.0], [0.0, 0.0, 1.0]])
    r = np.asarray(root, dtype=np.float64)
    return {k: rot @ v + r for k, v in j.items()}


_KP_ORDER = ("hip_r", "hip_l", "shoulder_r", "shoulder_l", "elbow_r", "elbow_l", "wrist_r", "wrist_l")


def keypoints_of(joints: dict) -> np.ndarray:
    return np.stack([joints[k] for k in _KP_ORDER])


def pose_at(template: GestureTemplate, phase: float, skeleton: SkeletonModel, root=(0.0, 0.0, 0.0),
            yaw: float = 0.0, style: SubjectStyle = SubjectStyle()) -> np.ndarray:
    """Ground-truth (8, 3) keypoints in the world frame."""
    return keypoints_of(joints_at(template, phase, skeleton, root, yaw, style))


def body_capsules(joints: dict, s: SkeletonModel) -> np.ndarray:
    """(K, 7) capsules: two torso halves, head, arms, legs."""
    caps = []
    mid_hip = 0.5 * (joints["hip_r"] + joints["hip_l"])
    mid_sh = 0.5 * (joints["shoulder_r"] + joints["shoulder_l"])
    lat = joints["shoulder_l"] - joints["shoulder_r"]
    lat /= np.linalg.norm(lat)
    up = mid_sh - mid_hip
    up_n = up / np.linalg.norm(up)
    half = 0.5 * s.shoulder_half
    for sign in (-1.0, 1.0):
        a = mid_hip + sign * half * lat
        b = mid_sh + sign * half * lat - 0.5 * s.torso_radius * up_n
        caps.append((*a, *b, s.torso_radius))
    caps.append((*joints["head"], *joints["head"], s.head_radius))
    for side in "rl":
        caps.append((*joints[f"shoulder_{side}"], *joints[f"elbow_{side}"], s.upper_arm_radius))
        caps.append((*joints[f"elbow_{side}"], *joints[f"wrist_{side}"], s.forearm_radius))
        caps.append((*joints[f"hip_{side}"], *joints[f"foot_{side}"], s.leg_radius))
    return np.array(caps, dtype=np.float64)


# ---------------------------------------------------------------------------
# lidar
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LidarModel:
    beams: int = 64
    vertical_fov: float = 16.6  # +- degrees
    azimuth_resolution: float = 0.35  # degrees
    range_noise: float = 0.01  # m, std
    rate: float = 10.0  # Hz
    sensor_height: float = 1.0  # m above ground
    max_range: float = 100.0
    ground_range: float = 10.0  # ground returns rendered out to this horizontal range

    def __post_init__(self):
        if self.beams <= 0 or self.vertical_fov <= 0 or self.azimuth_resolution <= 0 or self.rate <= 0:
            raise ValueError("lidar parameters must be positive")
        if self.range_noise < 0:
            raise ValueError("range noise must be >= 0")

    @property
    def columns(self) -> int:
        return int(round(360.0 / self.azimuth_resolution))

    @property
    def ground_z(self) -> float:
        return -self.sensor_height


@lru_cache(maxsize=8)
def _beam_pattern(beams: int, fov: float, columns: int):
    elev = np.radians(np.linspace(-fov, fov, beams))
    az = np.arange(columns) * (2 * np.pi / columns) - np.pi
    ce, se = np.cos(elev), np.sin(elev)
    dirs = np.empty((columns, beams, 3))
    dirs[..., 0] = np.cos(az)[:, None] * ce[None, :]
    dirs[..., 1] = np.sin(az)[:, None] * ce[None, :]
    dirs[..., 2] = se[None, :]
    dirs.setflags(write=False)
    return az, dirs


def _sector_columns(capsules: np.ndarray, origin: np.ndarray, lidar: LidarModel) -> np.ndarray | None:
    """Azimuth columns that can see the capsules, or None for all columns."""
    pts = np.concatenate([capsules[:, 0:3], capsules[:, 3:6]]) - origin
    rad = np.concatenate([capsules[:, 6], capsules[:, 6]]) + 0.05
    d = np.hypot(pts[:, 0], pts[:, 1])
    if np.any(d <= rad * 1.5):
        return None
    az = np.arctan2(pts[:, 1], pts[:, 0])
    center = np.arctan2(np.sin(az).mean(), np.cos(az).mean())
    half = np.max(np.abs(np.angle(np.exp(1j * (az - center)))) + np.arcsin(np.minimum(rad / d, 1.0)))
    if half >= np.pi / 2:
        return None
    n = lidar.columns
    step = 2 * np.pi / n
    lo = int(np.floor((center - half + np.pi) / step)) - 1
    hi = int(np.ceil((center + half + np.pi) / step)) + 1
    return np.arange(lo, hi + 1) % n


def render_scan(capsules: np.ndarray, lidar: LidarModel = LidarModel(), rng: np.random.Generator | None = None,
                origin=(0.0, 0.0, 0.0), ground: bool = False, timestamp: float = 0.0,
                return_ids: bool = False):
    """Cast every beam against ``capsules`` (and the ground plane if asked).

    Returns a :class:`PointCloud`; with ``return_ids`` also the hit capsule
    index per point (``len(capsules)`` marks ground).
    """
    origin = np.asarray(origin, dtype=np.float64)
    capsules = np.asarray(capsules, dtype=np.float64).reshape(-1, 7)
    _, dirs = _beam_pattern(lidar.beams, lidar.vertical_fov, lidar.columns)
    cols = None if ground or len(capsules) == 0 else _sector_columns(capsules, origin, lidar)
    rays = (dirs if cols is None else dirs[cols]).reshape(-1, 3)
    gz = lidar.ground_z + 0.0 if ground else np.nan
    t, ids = kernels.raycast(origin, np.ascontiguousarray(rays), np.ascontiguousarray(capsules), gz, lidar.ground_range)
    hit = np.isfinite(t) & (t <= lidar.max_range)
    t, ids, rays = t[hit], ids[hit], rays[hit]
    if lidar.range_noise > 0 and rng is not None:
        t = t + rng.normal(0.0, lidar.range_noise, size=t.shape)
    cloud = PointCloud((origin + t[:, None] * rays).astype(np.float32), timestamp)
    return (cloud, ids) if return_ids else cloud


def place(distance: float, bearing: float, rotation: float, lidar: LidarModel):
    """Root position and body yaw for a subject at ``distance``/``bearing``
    from the sensor, turned ``rotation`` radians away from facing it."""
    root = np.array([distance * np.cos(bearing), distance * np.sin(bearing), lidar.ground_z])
    return root, bearing + np.pi + rotation


def pole(x: float, y: float, lidar: LidarModel, height: float = 1.2, radius: float = 0.1) -> tuple:
    """Static clutter capsule standing on the ground."""
    z0 = lidar.ground_z + radius
    return (x, y, z0, x, y, lidar.ground_z + height, radius)


# ---------------------------------------------------------------------------
# person extraction shared by dataset generation and evaluation
# ---------------------------------------------------------------------------


def extract_person(cloud: PointCloud, target_xy, params: ClusterParams, max_dist: float = 1.0):
    """Cluster the cloud and return the points of the cluster nearest to
    ``target_xy`` (None if no cluster within ``max_dist``)."""
    keep = remove_ground(cloud, params)
    clusters = euclidean_cluster(cloud, params, keep)
    if not clusters:
        return None
    cents = np.array([cloud.points[c.indices].mean(axis=0) for c in clusters])
    d = np.hypot(cents[:, 0] - target_xy[0], cents[:, 1] - target_xy[1])
    k = int(np.argmin(d))
    if d[k] > max_dist:
        return None
    return cloud.points[clusters[k].indices]


# ---------------------------------------------------------------------------
# pose dataset
# ---------------------------------------------------------------------------


@dataclass
class PoseDataset:
    images: np.ndarray      # (N, rows, cols) float32
    labels: np.ndarray      # (N, 24) float32, normalized (u, v, w) per keypoint
    keypoints: np.ndarray   # (N, 8, 3) ground truth in the view frame, meters
    centroid_distance: np.ndarray
    bearing: np.ndarray
    bottom: np.ndarray
    subject: np.ndarray
    template: np.ndarray
    distance: np.ndarray
    projection: ProjectionParams = ProjectionParams()

    def __len__(self) -> int:
        return len(self.images)

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.images, self.labels, self.keypoints):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    def decode_view(self, encoded) -> np.ndarray:
        """Normalized (N, 24) predictions -> (N, 8, 3) view-frame meters."""
        p = self.projection
        e = np.asarray(encoded, dtype=np.float64).reshape(-1, N_KEYPOINTS, 3)
        lateral = e[..., 0] * p.window_width - p.window_width / 2
        z = self.bottom[:, None] + p.window_height - e[..., 1] * p.window_height
        depth = self.centroid_distance[:, None] + (e[..., 2] - 0.5) * 2 * p.depth_clip
        return np.stack([depth, lateral, z], axis=-1)

    def save(self, path) -> None:
        np.savez_compressed(path, **{k: v for k, v in asdict(self).items() if k != "projection"})

    @classmethod
    def load(cls, path, projection: ProjectionParams = ProjectionParams()) -> "PoseDataset":
        with np.load(path) as z:
            return cls(**{k: z[k] for k in z.files}, projection=projection)


@dataclass(frozen=True)
class PoseGenConfig:
    distance: tuple = (2.0, 9.0)
    rotation_deg: float = 15.0
    augment: int = 1              # samples per rendered frame
    keep_original: bool = True    # first sample of each frame is untransformed
    augment_yaw_deg: float = 15.0
    augment_scale: tuple = (0.8, 1.25)
    augment_shift: float = 0.2
    angle_jitter: float = 12.0    # per-frame arm-angle noise, degrees (std)
    random_fraction: float = 0.25  # share of frames with arbitrary arm angles


def gen_pose_dataset(n_frames: int, subjects: list[Subject], seed: int, cfg: PoseGenConfig = PoseGenConfig(),
                     lidar: LidarModel = LidarModel(), projection: ProjectionParams = ProjectionParams(),
                     cluster: ClusterParams | None = None) -> tuple[PoseDataset, dict]:
    """Render, cluster, project and label ``n_frames`` frames; each frame
    yields ``cfg.augment`` samples: the original (if ``keep_original``) and
    randomly rotated, shifted and resized copies of the cluster and its
    keypoints."""
    if n_frames <= 0:
        raise ValueError("n_frames must be > 0")
    if cfg.augment < 1:
        raise ValueError("augment must be >= 1")
    if not subjects:
        raise ValueError("need at least one subject")
    cluster = cluster or ClusterParams(ground_z=lidar.ground_z)
    templates = all_templates()
    rows = {k: [] for k in ("images", "labels", "keypoints", "centroid_distance", "bearing", "bottom",
                            "subject", "template", "distance")}
    skipped = 0
    draw = 0
    made = 0
    while made < n_frames:
        rng = np.random.default_rng([seed, draw])
        draw += 1
        subj = subjects[made % len(subjects)]
        tmpl = templates[rng.integers(len(templates))]
        if rng.uniform() < cfg.random_fraction:
            tmpl = random_arm_template(rng)
        jitter = rng.normal(0.0, cfg.angle_jitter, size=8) if cfg.angle_jitter > 0 else None
        phase = rng.uniform(0.0, 1.0)
        dist = rng.uniform(*cfg.distance)
        bearing = rng.uniform(-np.pi, np.pi)
        rot = np.radians(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
        root, yaw = place(dist, bearing, rot, lidar)
        joints = joints_at(tmpl, phase, subj.skeleton, root, yaw, subj.style, jitter)
        cloud = render_scan(body_capsules(joints, subj.skeleton), lidar, rng)
        pts = extract_person(cloud, root[:2], cluster)
        if pts is None:
            skipped += 1
            log.info("frame draw %d: no person cluster, skipped", draw - 1)
            continue
        kps = keypoints_of(joints)
        samples = [(pts, kps)] if cfg.keep_original else []
        center = pts.astype(np.float64).mean(axis=0)
        for _ in range(cfg.augment - len(samples)):
            t = ClusterTransform(
                yaw=np.radians(rng.uniform(-cfg.augment_yaw_deg, cfg.augment_yaw_deg)),
                translation=(rng.uniform(-cfg.augment_shift, cfg.augment_shift),
                             rng.uniform(-cfg.augment_shift, cfg.augment_shift), 0.0),
                scale=rng.uniform(*cfg.augment_scale),
            )
            samples.append((augment_cluster(pts, t, center), augment_cluster(kps, t, center)))
        for p, k in samples:
            img = project_points(p, 0.0, projection)
            rows["images"].append(img.pixels)
            rows["labels"].append(encode_keypoints(k, img).reshape(-1).astype(np.float32))
            rows["keypoints"].append(to_view_frame(k, img.bearing))
            rows["centroid_distance"].append(img.centroid_distance)
            rows["bearing"].append(img.bearing)
            rows["bottom"].append(img.bottom)
            rows["subject"].append(subj.id)
            rows["template"].append(tmpl.id)
            rows["distance"].append(dist)
        made += 1
    ds = PoseDataset(
        images=np.stack(rows["images"]).astype(np.float32),
        labels=np.stack(rows["labels"]).astype(np.float32),
        keypoints=np.stack(rows["keypoints"]),
        centroid_distance=np.array(rows["centroid_distance"]),
        bearing=np.array(rows["bearing"]),
        bottom=np.array(rows["bottom"]),
        subject=np.array(rows["subject"], dtype=np.int64),
        template=np.array(rows["template"], dtype=np.int64),
        distance=np.array(rows["distance"]),
        projection=projection,
    )
    manifest = {
        "kind": "pose",
        "seed": seed,
        "n_frames": n_frames,
        "samples": len(ds),
        "skipped_draws": skipped,
        "subjects": [subject_record(s) for s in subjects],
        "config": _jsonable(asdict(cfg)),
        "lidar": asdict(lidar),
        "projection": asdict(projection),
        "sha256": ds.digest(),
    }
    return ds, manifest


# ---------------------------------------------------------------------------
# gesture dataset
# ---------------------------------------------------------------------------


def record_gesture(template: GestureTemplate, subject: Subject, seconds: float, rate: float, rng,
                   distance: float = 4.0, rotation_deg: float = 10.0, labeler_noise: float = 0.01) -> PoseSequence:
    """Ground-truth keypoint recording in the view frame (sensor at the
    origin looking down +x at the subject)."""
    n = int(round(seconds * rate))
    t = np.arange(n) / rate
    period = template.period * subject.style.period_scale
    phase0 = rng.uniform(0.0, 1.0)
    rot = np.radians(rng.uniform(-rotation_deg, rotation_deg))
    root = np.array([distance, 0.0, 0.0])
    pts = np.empty((n, N_KEYPOINTS, 3))
    for k in range(n):
        phase = (phase0 + t[k] / period) % 1.0
        pts[k] = pose_at(template, phase, subject.skeleton, root, np.pi + rot, subject.style)
    if labeler_noise > 0:
        pts += rng.normal(0.0, labeler_noise, size=pts.shape)
    return PoseSequence(pts, t, rate, template.id, subject.id)


def record_transition(template: GestureTemplate, subject: Subject, rate: float, rng, onset: bool = True,
                      still: float = 0.8, move: float = 0.5, held: float = 0.2, distance: float = 4.0,
                      rotation_deg: float = 10.0, labeler_noise: float = 0.01, label: int = 0) -> PoseSequence:
    """Clip of the arms moving between the neutral stance and ``template``:
    ``still`` s neutral, ``move`` s blend, ``held`` s of the gesture
    (reversed order when ``onset`` is False)."""
    neutral = NEGATIVES[0]
    n = int(round((still + move + held) * rate))
    t = np.arange(n) / rate
    period = template.period * subject.style.period_scale
    phase0 = rng.uniform(0.0, 1.0)
    rot = np.radians(rng.uniform(-rotation_deg, rotation_deg))
    root = np.array([distance, 0.0, 0.0])
    # w = weight of the gesture pose
    if onset:
        w = np.clip((t - still) / move, 0.0, 1.0)
        frozen = phase0
    else:
        w = np.clip(1.0 - (t - held) / move, 0.0, 1.0)
        frozen = (phase0 + held / period) % 1.0
    pts = np.empty((n, N_KEYPOINTS, 3))
    for k in range(n):
        phase = (phase0 + t[k] / period) % 1.0
        if onset:
            shown = _blend(neutral, 0.0, template, w[k])
        elif w[k] >= 1.0:
            shown = template
        else:
            shown = _blend(template, frozen, neutral, 1.0 - w[k])
        pts[k] = pose_at(shown, phase, subject.skeleton, root, np.pi + rot, subject.style)
    if labeler_noise > 0:
        pts += rng.normal(0.0, labeler_noise, size=pts.shape)
    return PoseSequence(pts, t, rate, label, subject.id)


@dataclass
class GestureDataset:
    recordings: list[PoseSequence]
    names: list[str]

    def split(self, train_subjects) -> tuple["GestureDataset", "GestureDataset"]:
        train_subjects = set(train_subjects)
        tr = [(r, n) for r, n in zip(self.recordings, self.names) if r.subject in train_subjects]
        te = [(r, n) for r, n in zip(self.recordings, self.names) if r.subject not in train_subjects]
        return (GestureDataset([r for r, _ in tr], [n for _, n in tr]),
                GestureDataset([r for r, _ in te], [n for _, n in te]))

    def steady(self) -> "GestureDataset":
        """Only the full-length recordings (no transition clips)."""
        keep = [(r, n) for r, n in zip(self.recordings, self.names) if not is_transition(n)]
        return GestureDataset([r for r, _ in keep], [n for _, n in keep])

    @property
    def subjects(self) -> list[int]:
        return sorted({r.subject for r in self.recordings})


def is_transition(name: str) -> bool:
    return name.startswith(("onset_", "offset_", "enter_"))


def gen_gesture_dataset(subjects: list[Subject], seed: int, seconds: float = 6.0, rate: float = 30.0,
                        labeler_noise: float = 0.01, transitions: int = 6) -> tuple[GestureDataset, dict]:
    """Per subject: one recording of each of the 18 gestures and of each
    negative (no-gesture) behaviour, plus transition clips.

    Transition clips teach the classifier what a gesture onset looks like:
    per gesture one "enter" clip (0.5 s rising from neutral, 1 s held,
    labelled with the gesture), and ``transitions`` null-labelled clips on a
    per-subject random subset of gestures, either mostly neutral before the
    rise (onset) or mostly neutral after the drop (offset).
    """
    if len(subjects) < 2:
        raise ValueError("need at least 2 subjects")
    if not 0 <= transitions <= 2 * N_GESTURES:
        raise ValueError(f"transitions must be in [0, {2 * N_GESTURES}]")
    recs, names = [], []
    for subj in subjects:
        for k, tmpl in enumerate(list(NEGATIVES) + [GESTURES[i] for i in range(1, N_GESTURES + 1)]):
            rng = np.random.default_rng([seed, subj.id, k])
            recs.append(record_gesture(tmpl, subj, seconds, rate, rng, labeler_noise=labeler_noise))
            names.append(tmpl.name)
        for gid in range(1, N_GESTURES + 1):
            rng = np.random.default_rng([seed, subj.id, 3000 + gid])
            recs.append(record_transition(GESTURES[gid], subj, rate, rng, still=0.0, held=1.0,
                                          labeler_noise=labeler_noise, label=gid))
            names.append("enter_" + GESTURES[gid].name)
        pick = np.random.default_rng([seed, subj.id, 1000]).permutation(2 * N_GESTURES)[:transitions]
        for j, code in enumerate(sorted(pick)):
            gid, onset = int(code) // 2 + 1, code % 2 == 0
            rng = np.random.default_rng([seed, subj.id, 2000 + j])
            recs.append(record_transition(GESTURES[gid], subj, rate, rng, onset=onset, labeler_noise=labeler_noise))
            names.append(("onset_" if onset else "offset_") + GESTURES[gid].name)
    ds = GestureDataset(recs, names)
    h = hashlib.sha256()
    for r in recs:
        h.update(r.points.tobytes())
    manifest = {
        "kind": "gesture",
        "seed": seed,
        "seconds": seconds,
        "rate": rate,
        "subjects": [subject_record(s) for s in subjects],
        "gesture_recordings": sum(1 for r, n in zip(recs, names) if r.label != 0 and not is_transition(n)),
        "negative_recordings": sum(1 for r, n in zip(recs, names) if r.label == 0 and not is_transition(n)),
        "transition_recordings": sum(1 for n in names if is_transition(n)),
        "label_map": {str(t.id): t.name for t in GESTURES.values()} | {"0": "none"},
        "sha256": h.hexdigest(),
    }
    return ds, manifest


# ---------------------------------------------------------------------------
# scenario streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StreamFrame:
    cloud: PointCloud
    gesture: int            # ground-truth class being performed
    root: np.ndarray        # subject ground position (sensor frame)
    keypoints: np.ndarray   # (8, 3) sensor frame


def _blend(prev: GestureTemplate, prev_phase: float, nxt: GestureTemplate, w: float) -> GestureTemplate:
    """Arm angles moving linearly from ``prev`` (frozen at ``prev_phase``)
    to ``nxt`` as ``w`` goes 0 -> 1."""

    def arms(phase, amp):
        a = prev.arms(prev_phase, amp)
        b = nxt.arms(phase, amp)
        right = tuple((1 - w) * np.asarray(a[0]) + w * np.asarray(b[0]))
        left = tuple((1 - w) * np.asarray(a[1]) + w * np.asarray(b[1]))
        return right, left, (1 - w) * a[2] + w * b[2]

    return GestureTemplate(nxt.id, nxt.name, nxt.kind, nxt.period, arms)


def scenario_stream(script, subject: Subject, lidar: LidarModel = LidarModel(), seed: int = 0,
                    distance: float = 4.0, bearing: float = 0.0, rotation_deg: float = 0.0,
                    path: Callable | None = None, clutter=(), ground: bool = True,
                    transition: float = 0.5) -> Iterator[StreamFrame]:
    """Render a gesture script ``[(gesture_id, seconds), ...]`` at the lidar
    rate. Gesture id 0 plays the neutral stance. ``path(t)`` may return
    ``(distance, bearing)`` to move the subject over time. The arms move
    from one segment's pose to the next over the first ``transition``
    seconds of each segment instead of jumping."""
    rng = np.random.default_rng(seed)
    dt = 1.0 / lidar.rate
    k = 0
    phase0 = rng.uniform()
    prev = None
    for gid, seconds in script:
        tmpl = GESTURES[gid] if gid else NEGATIVES[0]
        period = tmpl.period * subject.style.period_scale
        start = k * dt
        for _ in range(int(round(seconds * lidar.rate))):
            t = k * dt
            phase = (phase0 + t / period) % 1.0
            w = 1.0 if prev is None or transition <= 0 else min((t - start + dt) / transition, 1.0)
            shown = tmpl if w >= 1.0 else _blend(prev[0], prev[1], tmpl, w)
            d, b = path(t) if path is not None else (distance, bearing)
            root, yaw = place(d, b, np.radians(rotation_deg), lidar)
            joints = joints_at(shown, phase, subject.skeleton, root, yaw, subject.style)
            caps = body_capsules(joints, subject.skeleton)
            if len(clutter):
                caps = np.concatenate([caps, np.asarray(clutter, dtype=np.float64).reshape(-1, 7)])
            cloud = render_scan(caps, lidar, rng, ground=ground, timestamp=t)
            yield StreamFrame(cloud, gid, root, keypoints_of(joints))
            k += 1
            last = (shown, phase)
        prev = last


def subject_record(s: Subject) -> dict:
    return {"id": s.id, "skeleton": asdict(s.skeleton), "style": _jsonable(asdict(s.style))}


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=float))
