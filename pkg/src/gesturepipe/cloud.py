"""Point clouds, GPCL file I/O and euclidean clustering."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

GPCL_MAGIC = b"GPCL"
GPCL_VERSION = 1
_HEADER = struct.Struct("<4sIId")


class CloudFormatError(ValueError):
    """Base class for malformed GPCL files."""


class BadMagicError(CloudFormatError):
    pass


class TruncatedPayloadError(CloudFormatError):
    pass


@dataclass
class PointCloud:
    """One sweep: ``points`` is an (N, 3) float32 array in the sensor frame
    (x forward, y left, z up), in meters."""

    points: np.ndarray
    timestamp: float = 0.0
    frame_id: str = "lidar"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float32)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("point coordinates must be finite")
        if self.timestamp < 0:
            raise ValueError("timestamp must be non-negative")
        self.points = pts

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, indices) -> "PointCloud":
        return PointCloud(self.points[np.asarray(indices)], self.timestamp, self.frame_id)


@dataclass(frozen=True)
class ClusterParams:
    epsilon: float = 0.3
    min_points: int = 30
    max_points: int = 10000
    ground_z: float = -1.0          # ground plane height in the sensor frame
    ground_clearance: float = 0.2   # drop points below ground_z + clearance

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not 0 < self.min_points <= self.max_points:
            raise ValueError("need 0 < min_points <= max_points")


@dataclass(frozen=True)
class Cluster:
    """Sorted, unique point indices into the cloud the cluster came from."""

    indices: np.ndarray = field(repr=False)

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.int64))
        if idx.size == 0:
            raise ValueError("cluster must be non-empty")
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return len(self.indices)


def write_cloud(path, cloud: PointCloud) -> None:
    pts = np.ascontiguousarray(cloud.points, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(GPCL_MAGIC, GPCL_VERSION, len(pts), float(cloud.timestamp)))
        fh.write(pts.tobytes())


def read_cloud(path) -> PointCloud:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such cloud file: {path}")
    raw = path.read_bytes()
    if len(raw) < 4 or raw[:4] != GPCL_MAGIC:
        raise BadMagicError(f"{path}: not a GPCL file")
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: header truncated")
    _, version, count, ts = _HEADER.unpack_from(raw)
    if version != GPCL_VERSION:
        raise CloudFormatError(f"{path}: unsupported GPCL version {version}")
    need = _HEADER.size + 12 * count
    if len(raw) < need:
        raise TruncatedPayloadError(f"{path}: expected {count} points, payload has {(len(raw) - _HEADER.size) // 12}")
    pts = np.frombuffer(raw, dtype="<f4", count=3 * count, offset=_HEADER.size).reshape(count, 3)
    return PointCloud(pts.astype(np.float32), ts, path.stem)


def write_csv(path, cloud: PointCloud) -> None:
    np.savetxt(path, cloud.points, delimiter=",", header="x,y,z", comments="", fmt="%.9g")


def remove_ground(cloud: PointCloud, params: ClusterParams = ClusterParams()) -> np.ndarray:
    """Indices of points above the ground clearance band."""
    return np.flatnonzero(cloud.points[:, 2] > params.ground_z + params.ground_clearance)


def euclidean_cluster(cloud: PointCloud, params: ClusterParams = ClusterParams(), indices=None) -> list[Cluster]:
    """Connected components of the epsilon-neighbourhood graph.

    Components outside ``[min_points, max_points]`` are dropped. ``indices``
    restricts clustering to a subset (e.g. the output of :func:`remove_ground`);
    returned indices always refer to the full cloud. Clusters are ordered by
    their smallest index.
    """
    if indices is None:
        indices = np.arange(len(cloud))
    indices = np.asarray(indices, dtype=np.int64)
    if len(indices) == 0:
        return []
    pts = np.ascontiguousarray(cloud.points[indices])
    labels = kernels.cluster_labels(pts, float(params.epsilon))
    roots, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    order = np.argsort(inverse, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(counts)])
    clusters = []
    for k in range(len(roots)):
        if params.min_points <= counts[k] <= params.max_points:
            clusters.append(Cluster(indices[order[bounds[k]:bounds[k + 1]]]))
    clusters.sort(key=lambda c: c.indices[0])
    return clusters


def centroid(cloud: PointCloud, cluster: Cluster) -> np.ndarray:
    if cluster is None or len(cluster) == 0:
        raise ValueError("empty cluster")
    return cloud.points[cluster.indices].astype(np.float64).mean(axis=0)
