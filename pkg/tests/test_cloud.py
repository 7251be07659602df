import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gesturepipe import simgen as sg
from gesturepipe.cloud import (BadMagicError, Cluster, ClusterParams, PointCloud, TruncatedPayloadError, centroid,
                               euclidean_cluster, read_cloud, remove_ground, write_cloud, write_csv)

from conftest import union_find_partition


def partition(clusters):
    return sorted(tuple(c.indices.tolist()) for c in clusters)


def test_empty_cloud_roundtrip(tmp_path):
    write_cloud(tmp_path / "e.gpcl", PointCloud(np.empty((0, 3)), 1.5))
    c = read_cloud(tmp_path / "e.gpcl")
    assert len(c) == 0 and c.timestamp == 1.5


def test_roundtrip_bit_exact(tmp_path, rng):
    pts = rng.normal(size=(257, 3)).astype(np.float32)
    write_cloud(tmp_path / "c.gpcl", PointCloud(pts, 3.25))
    c = read_cloud(tmp_path / "c.gpcl")
    assert c.points.tobytes() == pts.tobytes()
    assert c.timestamp == 3.25


def test_gpcl_header_layout(tmp_path):
    write_cloud(tmp_path / "c.gpcl", PointCloud([[1, 2, 3]], 0.5))
    raw = (tmp_path / "c.gpcl").read_bytes()
    assert raw[:4] == b"GPCL"
    assert np.frombuffer(raw[4:12], "<u4").tolist() == [1, 1]
    assert np.frombuffer(raw[12:20], "<f8")[0] == 0.5
    assert np.frombuffer(raw[20:], "<f4").tolist() == [1, 2, 3]


def test_read_errors_are_distinct(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_cloud(tmp_path / "missing.gpcl")
    (tmp_path / "bad.gpcl").write_bytes(b"XXXX" + bytes(16))
    with pytest.raises(BadMagicError):
        read_cloud(tmp_path / "bad.gpcl")
    write_cloud(tmp_path / "t.gpcl", PointCloud(np.ones((10, 3)), 0.0))
    raw = (tmp_path / "t.gpcl").read_bytes()
    (tmp_path / "t.gpcl").write_bytes(raw[:-5])
    with pytest.raises(TruncatedPayloadError):
        read_cloud(tmp_path / "t.gpcl")


def test_csv_export(tmp_path):
    write_csv(tmp_path / "c.csv", PointCloud([[1, 2, 3], [4, 5, 6]]))
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "x,y,z" and len(lines) == 3


def test_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud([[np.nan, 0, 0]])
    with pytest.raises(ValueError):
        PointCloud([[0, 0, 0]], timestamp=-1)
    with pytest.raises(ValueError):
        ClusterParams(epsilon=0)
    with pytest.raises(ValueError):
        ClusterParams(min_points=5, max_points=4)
    with pytest.raises(ValueError):
        Cluster(np.array([], dtype=int))


def test_rendered_sweep_count_matches_hits():
    lidar = sg.LidarModel()
    subj = sg.make_subjects(1, 0)[0]
    root, yaw = sg.place(4.0, 0.0, 0.0, lidar)
    caps = sg.body_capsules(sg.joints_at(sg.NEGATIVES[0], 0.0, subj.skeleton, root, yaw), subj.skeleton)
    cloud, ids = sg.render_scan(caps, lidar, np.random.default_rng(0), return_ids=True)
    assert len(cloud) == len(ids) > 100


def test_two_close_points_one_cluster():
    cl = euclidean_cluster(PointCloud([[0, 0, 0], [0.1, 0, 0]]), ClusterParams(0.3, 1))
    assert partition(cl) == [(0, 1)]


def test_two_far_points():
    cloud = PointCloud([[0, 0, 0], [1.0, 0, 0]])
    assert partition(euclidean_cluster(cloud, ClusterParams(0.3, 1))) == [(0,), (1,)]
    assert euclidean_cluster(cloud, ClusterParams(0.3, 2)) == []


def test_empty_cloud_no_clusters():
    assert euclidean_cluster(PointCloud(np.empty((0, 3)))) == []


def test_max_points_drops_large_components():
    pts = np.zeros((5, 3)) + np.arange(5)[:, None] * [0.1, 0, 0]
    assert euclidean_cluster(PointCloud(pts), ClusterParams(0.3, 1, 4)) == []


def test_clustering_matches_union_find_oracle(rng):
    for _ in range(50):
        n = int(rng.integers(1, 300))
        pts = rng.uniform(-3, 3, size=(n, 3)).astype(np.float32)
        eps = float(rng.uniform(0.1, 1.0))
        got = partition(euclidean_cluster(PointCloud(pts), ClusterParams(eps, 1, 10**6)))
        assert got == union_find_partition(pts, eps)


@given(st.integers(0, 2**32 - 1))
def test_clustering_permutation_invariant(seed):
    r = np.random.default_rng(seed)
    pts = r.uniform(-2, 2, size=(int(r.integers(1, 120)), 3)).astype(np.float32)
    params = ClusterParams(float(r.uniform(0.1, 1.0)), 1)
    perm = r.permutation(len(pts))
    a = partition(euclidean_cluster(PointCloud(pts), params))
    b = euclidean_cluster(PointCloud(pts[perm]), params)
    assert a == sorted(tuple(sorted(perm[c.indices].tolist())) for c in b)


def test_clusters_are_disjoint(rng):
    pts = rng.uniform(-5, 5, size=(400, 3)).astype(np.float32)
    cl = euclidean_cluster(PointCloud(pts), ClusterParams(0.6, 3))
    idx = np.concatenate([c.indices for c in cl])
    assert len(idx) == len(np.unique(idx))


def test_indices_subset_refer_to_full_cloud():
    pts = np.array([[0, 0, -2.0], [5, 5, 0], [5.1, 5, 0]])
    cloud = PointCloud(pts)
    keep = remove_ground(cloud)
    assert keep.tolist() == [1, 2]
    assert partition(euclidean_cluster(cloud, ClusterParams(0.3, 1), keep)) == [(1, 2)]


def test_centroid():
    cloud = PointCloud([[0, 0, 0], [2, 0, 0], [7, 7, 7]])
    assert np.allclose(centroid(cloud, Cluster([0, 1])), [1, 0, 0])
    assert np.allclose(centroid(cloud, Cluster([2])), [7, 7, 7])
    with pytest.raises(ValueError):
        centroid(cloud, None)


def test_person_centroid_near_torso():
    lidar = sg.LidarModel()
    subj = sg.make_subjects(1, 3)[0]
    root, yaw = sg.place(5.0, 1.0, 0.2, lidar)
    joints = sg.joints_at(sg.GESTURES[6], 0.0, subj.skeleton, root, yaw)
    cloud = sg.render_scan(sg.body_capsules(joints, subj.skeleton), lidar, np.random.default_rng(1), ground=True)
    cl = euclidean_cluster(cloud, ClusterParams(), remove_ground(cloud))
    assert len(cl) == 1
    torso = 0.5 * (joints["hip_r"] + joints["hip_l"])
    assert np.hypot(*(centroid(cloud, cl[0])[:2] - torso[:2])) < 0.2
