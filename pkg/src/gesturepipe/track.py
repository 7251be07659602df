"""Constant-velocity Kalman tracking of the user's cluster on the ground plane."""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np


class TrackStatus(str, Enum):
    ACTIVE = "active"
    COASTING = "coasting"
    LOST = "lost"


@dataclass(frozen=True)
class KalmanParams:
    accel_noise: float = 2.0   # m/s^2
    meas_noise: float = 0.1    # m
    gate_radius: float = 1.0   # m
    lost_after: int = 10       # consecutive misses
    init_pos_std: float = 0.5  # m
    init_vel_std: float = 2.0  # m/s

    def __post_init__(self):
        if min(self.accel_noise, self.meas_noise, self.gate_radius) <= 0:
            raise ValueError("Kalman parameters must be strictly positive")
        if self.lost_after < 1:
            raise ValueError("lost_after must be >= 1")


@dataclass(frozen=True)
class TrackState:
    mean: np.ndarray        # (x, y, vx, vy)
    covariance: np.ndarray  # 4x4
    last_timestamp: float
    params: KalmanParams
    status: TrackStatus = TrackStatus.ACTIVE
    miss_count: int = 0

    @property
    def position(self) -> np.ndarray:
        return self.mean[:2]


_H = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])


def _symmetrize(p: np.ndarray) -> np.ndarray:
    return 0.5 * (p + p.T)


def transition(dt: float) -> np.ndarray:
    f = np.eye(4)
    f[0, 2] = f[1, 3] = dt
    return f


def process_noise(dt: float, accel_noise: float) -> np.ndarray:
    """White-acceleration discretization, per axis
    ``[[dt^4/4, dt^3/2], [dt^3/2, dt^2]] * accel_noise^2``."""
    q = np.zeros((4, 4))
    s2 = accel_noise**2
    for pos, vel in ((0, 2), (1, 3)):
        q[pos, pos] = dt**4 / 4 * s2
        q[pos, vel] = q[vel, pos] = dt**3 / 2 * s2
        q[vel, vel] = dt**2 * s2
    return q


def init_track(seed_position, t: float, params: KalmanParams = KalmanParams()) -> TrackState:
    seed = np.asarray(seed_position, dtype=np.float64)
    mean = np.array([seed[0], seed[1], 0.0, 0.0])
    cov = np.diag([params.init_pos_std**2] * 2 + [params.init_vel_std**2] * 2)
    return TrackState(mean, cov, float(t), params)


def predict(state: TrackState, dt: float) -> TrackState:
    if dt < 0:
        raise ValueError(f"negative dt: {dt}")
    f = transition(dt)
    mean = f @ state.mean
    cov = _symmetrize(f @ state.covariance @ f.T + process_noise(dt, state.params.accel_noise))
    return replace(state, mean=mean, covariance=cov, last_timestamp=state.last_timestamp + dt)


def predict_to(state: TrackState, t: float) -> TrackState:
    return predict(state, max(0.0, t - state.last_timestamp))


def associate(state: TrackState, centroids, params: KalmanParams | None = None) -> int | None:
    """Index of the centroid horizontally nearest the (already predicted)
    track position, if inside the gate. Ties go to the lowest index."""
    params = params or state.params
    if len(centroids) == 0:
        return None
    c = np.asarray(centroids, dtype=np.float64).reshape(-1, 3)
    d = np.hypot(c[:, 0] - state.mean[0], c[:, 1] - state.mean[1])
    best = int(np.argmin(d))  # argmin returns the first minimum
    return best if d[best] <= params.gate_radius else None


def update(state: TrackState, measurement) -> TrackState:
    z = np.asarray(measurement, dtype=np.float64)[:2]
    if not np.isfinite(z).all():
        raise ValueError("measurement must be finite")
    if state.status == TrackStatus.LOST:
        raise ValueError("cannot update a lost track; re-initialize it")
    r = np.eye(2) * state.params.meas_noise**2
    p = state.covariance
    s = _H @ p @ _H.T + r
    k = np.linalg.solve(s, _H @ p).T  # P H^T S^-1, S symmetric
    mean = state.mean + k @ (z - _H @ state.mean)
    # Joseph form keeps P positive definite
    ikh = np.eye(4) - k @ _H
    cov = _symmetrize(ikh @ p @ ikh.T + k @ r @ k.T)
    return replace(state, mean=mean, covariance=cov, status=TrackStatus.ACTIVE, miss_count=0)


def mark_missed(state: TrackState) -> TrackState:
    misses = state.miss_count + 1
    status = TrackStatus.COASTING if misses < state.params.lost_after else TrackStatus.LOST
    return replace(state, miss_count=misses, status=status)


class TrackLogWriter:
    """CSV rows ``t,x,y,vx,vy,status``."""

    def __init__(self, fh):
        self._w = csv.writer(fh)
        self._w.writerow(["t", "x", "y", "vx", "vy", "status"])

    def write(self, state: TrackState) -> None:
        x, y, vx, vy = state.mean
        self._w.writerow([f"{state.last_timestamp:.6f}", f"{x:.6f}", f"{y:.6f}", f"{vx:.6f}", f"{vy:.6f}", state.status.value])
