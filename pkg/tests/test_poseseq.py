import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gesturepipe import simgen as sg
from gesturepipe.poseseq import (CSV_HEADER, KEYPOINTS, AugmentParams, DegenerateSkeletonError, Pose, PoseBuffer,
                                 PoseSequence, augment_sequence, normalize_pose, read_sequence_csv, resample,
                                 window, write_sequence_csv)


def neutral(height=1.75):
    s = sg.SkeletonModel.from_height(height, None, jitter=0.0)
    return sg.pose_at(sg.GESTURES[9], 0.0, s)


def test_pose_named_access():
    p = Pose(neutral())
    assert KEYPOINTS == ("hip_r", "hip_l", "shoulder_r", "shoulder_l", "elbow_r", "elbow_l", "wrist_r", "wrist_l")
    assert np.array_equal(p["wrist_l"], p.points[7])
    with pytest.raises(ValueError):
        Pose(np.full((8, 3), np.nan))


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-5, 5), st.floats(0.1, 10))
def test_normalize_translation_scale_invariant(dx, dy, dz, s):
    p = neutral()
    f0 = normalize_pose(p)
    assert np.abs(normalize_pose(p + [dx, dy, dz]) - f0).max() < 1e-9
    assert np.abs(normalize_pose(p * s) - f0).max() < 1e-9


def test_normalize_not_rotation_invariant():
    p = neutral()
    c, s = np.cos(0.5), np.sin(0.5)
    rot = p @ np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]]).T
    assert np.abs(normalize_pose(rot) - normalize_pose(p)).max() > 0.1


def test_normalize_two_heights_close():
    assert np.linalg.norm(normalize_pose(neutral(1.5)) - normalize_pose(neutral(1.9))) < 0.05


def test_normalize_degenerate():
    with pytest.raises(DegenerateSkeletonError):
        normalize_pose(np.zeros((8, 3)))


def test_normalize_layout():
    p = neutral()
    f = normalize_pose(p)
    assert f.shape == (24,)
    hips = 0.5 * (p[0] + p[1])
    ref = 0.5 * (np.linalg.norm(p[2] - p[0]) + np.linalg.norm(p[3] - p[1]))
    assert np.allclose(f[3:6], (p[1] - hips) / ref)


def feed(rate, seconds=3.0):
    buf = PoseBuffer()
    for k in range(int(seconds * rate)):
        buf.push(Pose(neutral(), k / rate))
    return buf


def test_window_counts():
    assert len(window([], 1.0)) == 0
    assert len(feed(30).window(2.9)) == 30
    assert len(feed(10).window(2.9, rate=10)) == 10


def test_window_bounds(rng):
    times = np.sort(rng.uniform(0, 5, 200))
    items = [(t, neutral()) for t in np.unique(times)]
    for now in rng.uniform(0, 5, 20):
        w = window(items, now)
        assert np.all(w.timestamps > now - 1.0) and np.all(w.timestamps <= now + 1e-9)


def test_buffer_rejects_out_of_order():
    buf = feed(10, 1.0)
    with pytest.raises(ValueError):
        buf.push(Pose(neutral(), 0.5))


def test_buffer_prunes():
    buf = feed(10, 10.0)
    ts, _ = buf.arrays()
    assert ts[-1] - ts[0] <= buf.horizon + 1e-9


def linear_seq(n=30, rate=30.0):
    t = np.arange(n) / rate
    base = neutral()
    vel = np.linspace(-1, 1, 24).reshape(8, 3)
    return PoseSequence(base + t[:, None, None] * vel, t, rate, label=4)


def test_resample_identity_and_counts():
    seq = linear_seq()
    same = resample(seq, 30.0)
    assert np.abs(same.points - seq.points).max() < 1e-6
    assert len(resample(seq, 10.0)) == 10
    with pytest.raises(ValueError):
        resample(PoseSequence(neutral()[None], [0.0]), 10.0)


def test_resample_linear_exact():
    seq = linear_seq()
    r = resample(seq, 7.0)
    vel = np.linspace(-1, 1, 24).reshape(8, 3)
    expected = neutral() + r.timestamps[:, None, None] * vel
    assert np.abs(r.points - expected).max() < 1e-12


def test_augment_identity():
    seq = linear_seq(30)
    out = augment_sequence(seq, AugmentParams.identity(), 0)
    assert np.allclose(out.points, seq.points) and out.label == seq.label


def test_augment_translation_scale_do_not_change_features():
    seq = linear_seq(60)
    base = AugmentParams.identity()
    p = AugmentParams((1.0, 1.0), 0.0, (0.0, 0.0), (-1.0, 1.0), (0.9, 1.1))
    a = augment_sequence(seq, base, 3)
    b = augment_sequence(seq, p, 3)
    assert not np.allclose(a.points, b.points)
    assert np.abs(a.features() - b.features()).max() < 1e-9
    noisy = AugmentParams((1.0, 1.0), 0.02, (0.0, 0.0), (0.0, 0.0), (1.0, 1.0))
    assert np.abs(augment_sequence(seq, noisy, 3).features() - a.features()).max() > 1e-3


def test_augment_noise_constant_over_sequence():
    seq = linear_seq(60)
    p = AugmentParams((1.0, 1.0), 0.05, (0.0, 0.0), (0.0, 0.0), (1.0, 1.0))
    a = augment_sequence(seq, AugmentParams.identity(), 5)
    b = augment_sequence(seq, p, 5)
    d = b.points - a.points
    assert np.allclose(d, d[0])


def test_augment_reproducible_and_label_kept():
    seq = linear_seq(180)
    a = augment_sequence(seq, AugmentParams(), 42, out_rate=10)
    b = augment_sequence(seq, AugmentParams(), 42, out_rate=10)
    assert a.points.tobytes() == b.points.tobytes()
    assert len(a) == 10 and a.label == 4


def test_fifty_windows_from_six_seconds():
    rec = sg.record_gesture(sg.GESTURES[14], sg.make_subjects(1, 0)[0], 6.0, 30.0, np.random.default_rng(0))
    outs = [augment_sequence(rec, AugmentParams(), [7, k]) for k in range(50)]
    assert all(len(o) == 30 and o.label == 14 for o in outs)


def test_augment_params_validation():
    with pytest.raises(ValueError):
        AugmentParams(time_scale=(1.2, 0.8))
    with pytest.raises(ValueError):
        AugmentParams(noise_std=-1)


def test_csv_roundtrip(tmp_path):
    seq = linear_seq()
    write_sequence_csv(tmp_path / "s.csv", seq)
    back = read_sequence_csv(tmp_path / "s.csv", 30.0, subject=3)
    assert np.array_equal(back.points, seq.points) and np.array_equal(back.timestamps, seq.timestamps)
    assert back.label == 4 and back.subject == 3
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == ",".join(CSV_HEADER)
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_sequence_csv(tmp_path / "bad.csv")


def test_sequence_validation():
    with pytest.raises(ValueError):
        PoseSequence(np.zeros((2, 8, 3)), [1.0, 1.0])
    with pytest.raises(ValueError):
        PoseSequence(np.zeros((2, 8, 3)), [0.0])
