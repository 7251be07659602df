"""Time the numba and numpy variants of every hot kernel on realistic inputs.

    python benchmarks/bench_kernels.py [--repeat 20]

Both variants are imported directly, so ``GESTUREPIPE_DISABLE_NUMBA`` does
not matter here; it only selects which one the package uses at runtime.
"""
from __future__ import annotations

import argparse
import math
import time

import numpy as np

from gesturepipe import kernels as K
from gesturepipe import simgen as sg


def _time(fn, args, repeat):
    fn(*args)  # warm-up (jit compile for numba)
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _cases():
    rng = np.random.default_rng(0)
    lidar = sg.LidarModel()
    subj = sg.make_subjects(1, 0)[0]
    root, yaw = sg.place(4.0, 0.3, 0.0, lidar)
    joints = sg.joints_at(sg.GESTURES[14], 0.3, subj.skeleton, root, yaw)
    caps = sg.body_capsules(joints, subj.skeleton)
    cloud = sg.render_scan(caps, lidar, rng, ground=True)
    pts = cloud.points.astype(np.float64)

    dirs = np.ascontiguousarray(sg._beam_pattern(lidar.beams, lidar.vertical_fov, lidar.columns)[1].reshape(-1, 3))
    origin = np.zeros(3)

    rows = rng.integers(-5, 133, 3000)
    cols = rng.integers(-5, 69, 3000)
    depth = rng.uniform(1, 10, 3000)
    x = rng.standard_normal((8, 128, 64, 16)).astype(np.float32)
    _, arg = K.maxpool_fwd_np(x)
    dy = rng.standard_normal((8, 64, 32, 16)).astype(np.float32)
    dcols = rng.standard_normal((8, 128, 64, 25)).astype(np.float32)
    return {
        "cluster_labels": ((pts, 0.3), f"{len(pts)} points"),
        "raycast": ((origin, dirs, caps, lidar.ground_z, lidar.ground_range), f"{len(dirs)} rays x {len(caps)} capsules"),
        "rasterize_min": ((rows, cols, depth, 128, 64), "3000 points -> 128x64"),
        "maxpool_fwd": ((x,), "8x128x64x16"),
        "maxpool_bwd": ((dy, arg), "8x64x32x16"),
        "col2im": ((dcols, 5, 1), "8x128x64, k=5"),
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    print(f"{'kernel':16s} {'input':28s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, (inputs, desc) in _cases().items():
        nb = _time(getattr(K, name + "_nb"), inputs, args.repeat)
        npy = _time(getattr(K, name + "_np"), inputs, args.repeat)
        print(f"{name:16s} {desc:28s} {1e3 * nb:10.3f} {1e3 * npy:10.3f} {npy / nb:8.2f}")


if __name__ == "__main__":
    main()
