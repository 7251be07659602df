import numpy as np
import pytest

from gesturepipe import simgen as sg
from gesturepipe.cloud import Cluster, PointCloud
from gesturepipe.project import (ClusterTransform, ProjectionParams, augment_cluster, decode_keypoints,
                                 encode_keypoints, from_view_frame, project, project_points, read_gdim,
                                 to_view_frame, write_gdim, write_pgm)


def person_points(distance, bearing=0.0, rotation=0.0, noise=0.0, seed=0, template=None):
    lidar = sg.LidarModel(range_noise=noise)
    subj = sg.make_subjects(1, 1)[0]
    root, yaw = sg.place(distance, bearing, rotation, lidar)
    joints = sg.joints_at(template or sg.GESTURES[4], 0.0, subj.skeleton, root, yaw)
    cloud = sg.render_scan(sg.body_capsules(joints, subj.skeleton), lidar, np.random.default_rng(seed))
    return cloud.points.astype(np.float64), sg.keypoints_of(joints)


def test_single_point_mid_scale():
    img = project_points([[4.0, 1.0, 0.3]])
    nz = img.pixels[img.pixels > 0]
    assert nz.tolist() == [0.5]


def test_depth_clip_boundaries():
    d = 0.64
    pts = [[4.0 - d, 0, 0.0], [4.0, 0, 0.5], [4.0 + d, 0, 1.0]]
    img = project_points(pts)
    assert img.centroid_distance == pytest.approx(4.0)
    p = img.params
    col = int(np.floor(p.window_width / 2 / (p.window_width / p.cols)))

    def value(z):
        row = p.rows - 1 - int(np.floor((z - img.bottom) / (p.window_height / p.rows)))
        return img.pixels[row, col]

    assert value(0.0) == pytest.approx(1.0)
    assert value(0.5) == pytest.approx(0.5)
    assert value(1.0) == pytest.approx(0.0, abs=1e-6)


def test_pixels_in_unit_range_and_empty_rejected(rng):
    img = project_points(rng.normal(size=(500, 3)) * [2, 2, 1] + [5, 0, 0])
    assert img.pixels.dtype == np.float32
    assert img.pixels.min() >= 0 and img.pixels.max() <= 1 and np.isfinite(img.pixels).all()
    with pytest.raises(ValueError):
        project_points(np.empty((0, 3)))
    with pytest.raises(ValueError):
        project(PointCloud([[1, 1, 1]]), None)


def test_project_uses_cluster_indices():
    cloud = PointCloud([[4, 0, 0], [40, 0, 0]], timestamp=2.0)
    img = project(cloud, Cluster([0]))
    assert img.centroid_distance == pytest.approx(4.0) and img.timestamp == 2.0


def test_standing_person_height_fraction():
    pts, _ = person_points(4.0)
    img = project_points(pts)
    rows = np.flatnonzero(img.mask.any(axis=1))
    frac = (rows.max() - rows.min() + 1) / img.params.rows
    assert 0.35 <= frac <= 0.75


def test_view_frame_roundtrip(rng):
    pts = rng.normal(size=(20, 3))
    b = 0.7
    assert np.allclose(from_view_frame(to_view_frame(pts, b), b), pts)


def test_keypoint_encoding_roundtrip():
    pts, kps = person_points(5.0, bearing=2.0)
    img = project_points(pts)
    enc = encode_keypoints(kps, img)
    assert enc.min() >= 0 and enc.max() <= 1
    assert np.abs(decode_keypoints(enc, img) - kps).max() < 1e-9


def test_augment_identity_and_involution(rng):
    pts = rng.normal(size=(50, 3))
    assert np.allclose(augment_cluster(pts, ClusterTransform()), pts)
    half = ClusterTransform(yaw=np.pi)
    assert np.abs(augment_cluster(augment_cluster(pts, half), half) - pts).max() < 1e-6
    with pytest.raises(ValueError):
        ClusterTransform(scale=0)


def test_augment_labels_follow_points():
    pts, kps = person_points(4.0)
    t = ClusterTransform(yaw=0.4, translation=(0.3, -0.2, 0.0), scale=1.1)
    c = pts.mean(axis=0)
    a_pts, a_kps = augment_cluster(pts, t, c), augment_cluster(kps, t, c)
    # distances between keypoints and points scale uniformly
    d0 = np.linalg.norm(pts[:, None] - kps[None], axis=-1)
    d1 = np.linalg.norm(a_pts[:, None] - a_kps[None], axis=-1)
    assert np.allclose(d1, 1.1 * d0)


def test_translation_along_ray_keeps_mask():
    pts, _ = person_points(4.0, bearing=0.3)
    ray = np.array([np.cos(0.3), np.sin(0.3), 0.0])
    img0 = project_points(pts)
    img1 = project_points(augment_cluster(pts, ClusterTransform(translation=tuple(ray))))
    assert img1.centroid_distance == pytest.approx(img0.centroid_distance + 1.0, abs=1e-3)
    assert np.array_equal(img0.mask, img1.mask)


def test_rotation_about_sensor_equivariance():
    pts, _ = person_points(4.0, bearing=0.0)
    img0 = project_points(pts)
    for ang in (0.5, 2.0, -2.5):
        c, s = np.cos(ang), np.sin(ang)
        rot = pts @ np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]]).T
        img1 = project_points(rot)
        assert np.mean(np.abs(img1.pixels - img0.pixels)) <= 0.02


def test_silhouette_shrinks_with_distance():
    counts = []
    for d in range(2, 11):
        pts, _ = person_points(float(d))
        counts.append(int(project_points(pts).mask.sum()))
    assert all(b <= a for a, b in zip(counts, counts[1:])), counts


def test_gdim_and_pgm(tmp_path):
    pts, _ = person_points(4.0)
    img = project_points(pts)
    write_gdim(tmp_path / "a.gdim", img)
    assert np.array_equal(read_gdim(tmp_path / "a.gdim"), img.pixels)
    raw = (tmp_path / "a.gdim").read_bytes()
    assert raw[:4] == b"GDIM" and np.frombuffer(raw[4:16], "<u4").tolist() == [1, 128, 64]
    (tmp_path / "bad.gdim").write_bytes(b"NOPE")
    with pytest.raises(ValueError):
        read_gdim(tmp_path / "bad.gdim")
    (tmp_path / "t.gdim").write_bytes(raw[:100])
    with pytest.raises(ValueError):
        read_gdim(tmp_path / "t.gdim")
    write_pgm(tmp_path / "a.pgm", img)
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n64 128\n65535\n")


def test_params_validation():
    with pytest.raises(ValueError):
        ProjectionParams(rows=0)
    with pytest.raises(ValueError):
        ProjectionParams(depth_clip=0)
