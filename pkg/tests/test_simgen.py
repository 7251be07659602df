import dataclasses

import numpy as np
import pytest

from gesturepipe import simgen as sg
from gesturepipe.cloud import ClusterParams
from gesturepipe.poseseq import WRIST_R
from gesturepipe.project import ProjectionParams

SKEL = sg.SkeletonModel()
NEUTRAL = sg.NEGATIVES[0]


def seg_dist(p, a, b):
    ab = b - a
    t = np.clip(((p - a) @ ab) / max(ab @ ab, 1e-300), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1)


def test_neutral_z_ordering():
    kp = sg.pose_at(NEUTRAL, 0.0, SKEL)
    for side in (0, 1):
        sh, el, wr = kp[2 + side, 2], kp[4 + side, 2], kp[6 + side, 2]
        assert wr < el < sh
    assert kp[0, 2] < kp[2, 2]


@pytest.mark.parametrize("gid", sg.STATIC_IDS)
def test_static_phase_invariant(gid):
    a = sg.pose_at(sg.GESTURES[gid], 0.0, SKEL)
    b = sg.pose_at(sg.GESTURES[gid], 0.7, SKEL)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("gid", sg.DYNAMIC_IDS)
def test_dynamic_templates_move(gid):
    t = sg.GESTURES[gid]
    d = [np.abs(sg.pose_at(t, p, SKEL) - sg.pose_at(t, p + 0.5, SKEL)).max() for p in (0.0, 0.25)]
    assert max(d) > 0.05


def test_wave_period():
    tmpl = sg.GESTURES[13]
    subj = sg.Subject(0, SKEL)
    rate = 30.0
    seq = sg.record_gesture(tmpl, subj, 4.0, rate, np.random.default_rng(0), labeler_noise=0.0)
    lag = int(round(tmpl.period * rate))
    z = seq.points[:, 6, 2]
    assert np.max(np.abs(z[lag:] - z[:-lag])) < 1e-6
    half = z[lag // 2:] - z[:-(lag // 2)]
    assert np.max(np.abs(half)) > 0.02
    # analytic: sample the trajectory directly
    zs = [sg.pose_at(tmpl, p, SKEL)[6, 2] for p in np.linspace(0, 1, 41)]
    assert abs(zs[0] - zs[-1]) < 1e-6


@pytest.mark.parametrize("phase", [-0.01, 1.01, np.nan])
def test_invalid_phase(phase):
    with pytest.raises(ValueError):
        sg.pose_at(NEUTRAL, phase, SKEL)


def _render(distance, bearing=0.0, noise=0.0, tmpl=NEUTRAL, yaw_off=0.0):
    lidar = sg.LidarModel(range_noise=noise)
    root, yaw = sg.place(distance, bearing, yaw_off, lidar)
    joints = sg.joints_at(tmpl, 0.0, SKEL, root, yaw)
    caps = sg.body_capsules(joints, SKEL)
    return sg.render_scan(caps, lidar, np.random.default_rng(0), return_ids=True), caps, joints


def test_render_behind_sensor():
    (cloud, _), _, _ = _render(4.0, bearing=np.pi)
    assert len(cloud) > 100
    assert np.all(cloud.points[:, 0] < 0)


def test_render_points_on_capsule_surface():
    (cloud, ids), caps, _ = _render(2.5, bearing=0.4)
    assert len(cloud) > 0
    p = cloud.points.astype(np.float64)
    for k in np.unique(ids):
        sel = ids == k
        c = caps[k]
        d = seg_dist(p[sel], c[0:3], c[3:6]) - c[6]
        # points are stored as float32; at 2.5 m that is ~2e-7 per coordinate
        assert np.max(np.abs(d)) < 1e-6


def test_render_nearest_hit():
    # no returned point lies strictly inside any capsule
    (cloud, _), caps, _ = _render(3.0, tmpl=sg.GESTURES[3])
    p = cloud.points.astype(np.float64)
    for c in caps:
        assert np.all(seg_dist(p, c[0:3], c[3:6]) - c[6] > -1e-5)


def test_point_count_falls_with_distance():
    (near, _), _, _ = _render(3.0)
    (far, _), _, _ = _render(8.0)
    assert 0 < len(far) < len(near)


def test_render_out_of_view_is_empty():
    caps = np.array([[200.0, 0, 0, 200.0, 0, 1, 0.2]])
    assert len(sg.render_scan(caps, sg.LidarModel())) == 0


def test_keypoints_inside_inflated_bbox():
    # beyond ~4.2 m a raised hand (2.2 m above ground) is inside the +-16.6 deg FOV
    cp = ClusterParams(ground_z=sg.LidarModel().ground_z)
    rng = np.random.default_rng(3)
    subjects = sg.make_subjects(3, 1)
    for k in range(30):
        subj = subjects[k % 3]
        tmpl = sg.all_templates()[k % 21]
        root, yaw = sg.place(rng.uniform(4.5, 9), rng.uniform(-np.pi, np.pi), np.radians(rng.uniform(-15, 15)),
                             sg.LidarModel())
        joints = sg.joints_at(tmpl, rng.uniform(), subj.skeleton, root, yaw, subj.style)
        cloud = sg.render_scan(sg.body_capsules(joints, subj.skeleton), sg.LidarModel(), rng)
        pts = sg.extract_person(cloud, root[:2], cp)
        assert pts is not None
        s = subj.skeleton
        r = max(s.torso_radius, s.upper_arm_radius, s.forearm_radius, s.leg_radius) + 0.03
        kp = sg.keypoints_of(joints)
        assert np.all(kp >= pts.min(axis=0) - r) and np.all(kp <= pts.max(axis=0) + r)


def test_pose_dataset_single_frame_roundtrip():
    cfg = sg.PoseGenConfig(augment=1, keep_original=True)
    ds, man = sg.gen_pose_dataset(1, sg.make_subjects(1, 0), 0, cfg)
    assert len(ds) == 1 and man["samples"] == 1
    p = ProjectionParams()
    pix = np.array([p.window_width / p.cols, p.window_height / p.rows, 2 * p.depth_clip / p.rows])
    err = np.abs(ds.decode_view(ds.labels) - ds.keypoints)
    assert np.all(err <= pix)
    assert ds.images.shape == (1, p.rows, p.cols)


@pytest.mark.parametrize("k", [2, 3])
def test_pose_dataset_augmentation_count(k):
    ds, man = sg.gen_pose_dataset(4, sg.make_subjects(2, 0), 1, sg.PoseGenConfig(augment=k))
    assert len(ds) == 4 * k == man["samples"]
    assert ds.labels.shape == (4 * k, 24)


def test_pose_dataset_labels_normalized():
    ds, _ = sg.gen_pose_dataset(6, sg.make_subjects(2, 0), 2, sg.PoseGenConfig(augment=2))
    assert ds.images.min() >= 0 and ds.images.max() <= 1
    assert np.all((ds.labels > -0.5) & (ds.labels < 1.5))


def test_pose_dataset_errors():
    with pytest.raises(ValueError):
        sg.gen_pose_dataset(0, sg.make_subjects(1, 0), 0)
    with pytest.raises(ValueError):
        sg.gen_pose_dataset(1, [], 0)
    with pytest.raises(ValueError):
        sg.gen_pose_dataset(1, sg.make_subjects(1, 0), 0, sg.PoseGenConfig(augment=0))


def test_pose_dataset_deterministic(tmp_path):
    a, ma = sg.gen_pose_dataset(3, sg.make_subjects(2, 0), 9, sg.PoseGenConfig(augment=2))
    b, mb = sg.gen_pose_dataset(3, sg.make_subjects(2, 0), 9, sg.PoseGenConfig(augment=2))
    assert ma == mb and a.digest() == b.digest()
    a.save(tmp_path / "a.npz")
    c = sg.PoseDataset.load(tmp_path / "a.npz")
    assert c.digest() == a.digest()
    d, _ = sg.gen_pose_dataset(3, sg.make_subjects(2, 0), 10, sg.PoseGenConfig(augment=2))
    assert d.digest() != a.digest()


def test_gesture_dataset_counts_and_labels():
    subs = sg.make_subjects(8, 0)
    ds, man = sg.gen_gesture_dataset(subs, 0, seconds=1.0)
    assert man["gesture_recordings"] == 144
    assert man["negative_recordings"] == 8 * len(sg.NEGATIVES)
    assert man["transition_recordings"] == 8 * (18 + 6)
    names = {t.name: t.id for t in sg.all_templates()}
    steady = ds.steady()
    assert len(steady.recordings) == 8 * (18 + len(sg.NEGATIVES))
    for rec, name in zip(steady.recordings, steady.names):
        assert rec.label == names[name]
        assert rec.points.shape == (30, 8, 3)
    for s in subs:
        labels = sorted(r.label for r in steady.recordings if r.subject == s.id and r.label)
        assert labels == list(range(1, 19))
    for rec, name in zip(ds.recordings, ds.names):
        if name.startswith("enter_"):
            assert rec.label == names[name[6:]] and rec.points.shape == (45, 8, 3)
        elif name.startswith(("onset_", "offset_")):
            assert rec.label == 0 and name.split("_", 1)[1] in names


def test_transition_clip_endpoints():
    subj = sg.make_subjects(1, 3)[0]
    tmpl = sg.GESTURES[1]
    root = np.array([4.0, 0.0, 0.0])
    neutral = sg.pose_at(sg.NEGATIVES[0], 0.0, subj.skeleton, root, np.pi, subj.style)
    on = sg.record_transition(tmpl, subj, 30.0, np.random.default_rng(0), onset=True, rotation_deg=0.0,
                              labeler_noise=0.0)
    off = sg.record_transition(tmpl, subj, 30.0, np.random.default_rng(0), onset=False, rotation_deg=0.0,
                               labeler_noise=0.0)
    held = sg.pose_at(tmpl, 0.0, subj.skeleton, root, np.pi, subj.style)  # static: any phase
    assert len(on) == len(off) == 45 and on.label == off.label == 0
    np.testing.assert_allclose(on.points[0], neutral, atol=1e-9)    # still first
    np.testing.assert_allclose(on.points[-1], held, atol=1e-9)      # ends in the gesture
    np.testing.assert_allclose(off.points[0], held, atol=1e-9)
    np.testing.assert_allclose(off.points[-1], neutral, atol=1e-9)
    # halfway through the move the right wrist is between both ends
    mid = on.points[int(round(1.05 * 30)), WRIST_R, 2]
    assert neutral[WRIST_R, 2] < mid < held[WRIST_R, 2]
    with pytest.raises(ValueError):
        sg.gen_gesture_dataset(sg.make_subjects(2, 0), 0, seconds=0.5, transitions=37)


def test_gesture_split_subject_disjoint():
    subs = sg.make_subjects(8, 0)
    ds, _ = sg.gen_gesture_dataset(subs, 0, seconds=0.5)
    tr, te = ds.split([s.id for s in subs[:4]])
    assert set(tr.subjects).isdisjoint(te.subjects)
    assert len(tr.recordings) + len(te.recordings) == len(ds.recordings)
    assert len(tr.subjects) == len(te.subjects) == 4


def test_gesture_dataset_errors_and_determinism():
    with pytest.raises(ValueError):
        sg.gen_gesture_dataset(sg.make_subjects(1, 0), 0)
    a, ma = sg.gen_gesture_dataset(sg.make_subjects(2, 0), 4, seconds=0.5)
    b, mb = sg.gen_gesture_dataset(sg.make_subjects(2, 0), 4, seconds=0.5)
    assert ma["sha256"] == mb["sha256"]
    assert all(np.array_equal(x.points, y.points) for x, y in zip(a.recordings, b.recordings))


def test_no_skeleton_leakage():
    train = sg.make_subjects(2, 100)
    test = sg.make_subjects(3, 200, first_id=10)
    for a in train:
        for b in test:
            assert a.skeleton != b.skeleton
    assert {s.id for s in train}.isdisjoint(s.id for s in test)


def test_subject_variation():
    subs = sg.make_subjects(50, 0)
    h = np.array([s.skeleton.height for s in subs])
    assert h.min() >= 1.55 and h.max() <= 1.95
    for s in subs:
        ref = sg.SkeletonModel.from_height(s.skeleton.height)
        ratio = s.skeleton.upper_arm / ref.upper_arm
        assert 0.95 <= ratio <= 1.05
    with pytest.raises(ValueError):
        dataclasses.replace(SKEL, torso=0.0)


def test_scenario_stream():
    subj = sg.make_subjects(1, 0)[0]
    frames = list(sg.scenario_stream([(0, 0.3), (3, 0.5)], subj, seed=1))
    assert len(frames) == 8
    assert [f.gesture for f in frames] == [0] * 3 + [3] * 5
    assert np.allclose([f.cloud.timestamp for f in frames], np.arange(8) / 10.0)
    again = list(sg.scenario_stream([(0, 0.3), (3, 0.5)], subj, seed=1))
    assert all(np.array_equal(a.cloud.points, b.cloud.points) for a, b in zip(frames, again))
