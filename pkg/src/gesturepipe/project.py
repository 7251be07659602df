"""Person-cluster projection to a 128x64 depth image.

The image plane is vertical and perpendicular to the horizontal ray from the
sensor to the cluster centroid. Columns follow the plane's lateral axis (see
``view_axes``, 3 cm per pixel by default) and rows run down world z (2 cm). Depth is
measured along the viewing ray and encoded relative to the centroid, so the
image does not depend on subject distance.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .cloud import Cluster, PointCloud

GDIM_MAGIC = b"GDIM"
GDIM_VERSION = 1
_GDIM_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class ProjectionParams:
    rows: int = 128
    cols: int = 64
    window_height: float = 2.56
    window_width: float = 1.92
    depth_clip: float = 0.64
    ground_anchor: float = 0.10

    def __post_init__(self):
        if self.rows * self.cols <= 0:
            raise ValueError("image must have positive size")
        if min(self.window_height, self.window_width, self.depth_clip) <= 0:
            raise ValueError("window dimensions and depth_clip must be > 0")


@dataclass
class DepthImage:
    """Normalized depth raster plus the geometry needed to decode keypoints.

    ``pixels`` is (rows, cols) float32 in [0, 1]; 0 means no return.
    """

    pixels: np.ndarray
    centroid_distance: float
    bearing: float
    bottom: float
    timestamp: float = 0.0
    params: ProjectionParams = field(default_factory=ProjectionParams)

    @property
    def mask(self) -> np.ndarray:
        return self.pixels > 0


def view_axes(bearing: float) -> tuple[np.ndarray, np.ndarray]:
    """Unit viewing ray and lateral axis (ray rotated +90 deg about z)."""
    c, s = np.cos(bearing), np.sin(bearing)
    return np.array([c, s, 0.0]), np.array([-s, c, 0.0])


def to_view_frame(points, bearing: float) -> np.ndarray:
    """Sensor-frame points -> (depth along ray, lateral, z)."""
    ray, lat = view_axes(bearing)
    p = np.asarray(points, dtype=np.float64)
    return np.stack([p @ ray, p @ lat, p[..., 2]], axis=-1)


def from_view_frame(view, bearing: float) -> np.ndarray:
    ray, lat = view_axes(bearing)
    v = np.asarray(view, dtype=np.float64)
    return v[..., :1] * ray + v[..., 1:2] * lat + v[..., 2:3] * np.array([0.0, 0.0, 1.0])


def project_points(points, timestamp: float = 0.0, params: ProjectionParams = ProjectionParams()) -> DepthImage:
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) == 0:
        raise ValueError("cannot project an empty cluster")
    c = pts.mean(axis=0)
    bearing = float(np.arctan2(c[1], c[0]))
    view = to_view_frame(pts, bearing)
    dist = float(np.hypot(c[0], c[1]))
    bottom = float(pts[:, 2].min()) - params.ground_anchor
    pix_w = params.window_width / params.cols
    pix_h = params.window_height / params.rows
    cols = np.floor((view[:, 1] + params.window_width / 2) / pix_w).astype(np.int64)
    rows = params.rows - 1 - np.floor((view[:, 2] - bottom) / pix_h).astype(np.int64)
    nearest = kernels.rasterize_min(rows, cols, view[:, 0], params.rows, params.cols)
    hit = np.isfinite(nearest)
    offset = np.where(hit, nearest - dist, 0.0)
    value = 1.0 - np.clip((offset + params.depth_clip) / (2 * params.depth_clip), 0.0, 1.0)
    pixels = np.where(hit, value, 0.0).astype(np.float32)
    return DepthImage(pixels, dist, bearing, bottom, float(timestamp), params)


def project(cloud: PointCloud, cluster: Cluster, params: ProjectionParams = ProjectionParams()) -> DepthImage:
    if cluster is None or len(cluster) == 0:
        raise ValueError("cannot project an empty cluster")
    return project_points(cloud.points[cluster.indices], cloud.timestamp, params)


# ---------------------------------------------------------------------------
# keypoint label encoding
# ---------------------------------------------------------------------------


def encode_keypoints(keypoints, img: DepthImage) -> np.ndarray:
    """(K, 3) sensor-frame keypoints -> (K, 3) normalized (u, v, w) in [0, 1].

    u = column / cols, v = row / rows (from the top), w = depth offset from
    the centroid over twice the depth clip, plus 0.5.
    """
    p = img.params
    view = to_view_frame(keypoints, img.bearing)
    u = (view[:, 1] + p.window_width / 2) / p.window_width
    v = (img.bottom + p.window_height - view[:, 2]) / p.window_height
    w = (view[:, 0] - img.centroid_distance) / (2 * p.depth_clip) + 0.5
    return np.clip(np.stack([u, v, w], axis=1), 0.0, 1.0)


def decode_keypoints_view(encoded, img: DepthImage) -> np.ndarray:
    """Normalized (K, 3) -> view frame (depth, lateral, z) in meters."""
    p = img.params
    e = np.asarray(encoded, dtype=np.float64).reshape(-1, 3)
    lateral = e[:, 0] * p.window_width - p.window_width / 2
    z = img.bottom + p.window_height - e[:, 1] * p.window_height
    depth = img.centroid_distance + (e[:, 2] - 0.5) * 2 * p.depth_clip
    return np.stack([depth, lateral, z], axis=1)


def decode_keypoints(encoded, img: DepthImage) -> np.ndarray:
    """Normalized (K, 3) -> sensor-frame points in meters."""
    return from_view_frame(decode_keypoints_view(encoded, img), img.bearing)


# ---------------------------------------------------------------------------
# 3D cluster augmentation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClusterTransform:
    yaw: float = 0.0
    translation: tuple = (0.0, 0.0, 0.0)
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be > 0")


def augment_cluster(points, t: ClusterTransform, center=None) -> np.ndarray:
    """Rotate by yaw about the vertical axis through ``center`` (default: the
    points' centroid), scale about it, then translate. Pass the cluster's
    centroid as ``center`` when transforming keypoints so labels follow."""
    pts = np.asarray(points, dtype=np.float64)
    c = pts.mean(axis=0) if center is None else np.asarray(center, dtype=np.float64)
    cy, sy = np.cos(t.yaw), np.sin(t.yaw)
    rot = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    return (pts - c) @ rot.T * t.scale + c + np.asarray(t.translation, dtype=np.float64)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def write_gdim(path, img: DepthImage) -> None:
    px = np.ascontiguousarray(img.pixels, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_GDIM_HEADER.pack(GDIM_MAGIC, GDIM_VERSION, px.shape[0], px.shape[1]))
        fh.write(px.tobytes())


def read_gdim(path) -> np.ndarray:
    raw = open(path, "rb").read()
    if raw[:4] != GDIM_MAGIC:
        raise ValueError(f"{path}: not a GDIM file")
    if len(raw) < _GDIM_HEADER.size:
        raise ValueError(f"{path}: header truncated")
    _, version, rows, cols = _GDIM_HEADER.unpack_from(raw)
    if version != GDIM_VERSION:
        raise ValueError(f"{path}: unsupported GDIM version {version}")
    if len(raw) < _GDIM_HEADER.size + 4 * rows * cols:
        raise ValueError(f"{path}: payload truncated")
    return np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=_GDIM_HEADER.size).reshape(rows, cols).copy()


def write_pgm(path, img: DepthImage) -> None:
    """16-bit binary PGM (P5) for eyeballing."""
    px = np.round(np.clip(img.pixels, 0, 1) * 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{px.shape[1]} {px.shape[0]}\n65535\n".encode())
        fh.write(px.tobytes())
