import numpy as np
import pytest
from hypothesis import given, strategies as st

from met3r.core import (
    CameraIntrinsics,
    ImageFrame,
    PairScore,
    PointMapPair,
    Pose,
    RangeError,
    ShapeError,
    ShapeMismatch,
    combine_scores,
    validate_frame,
)


def test_validate_frame_identity():
    frame = ImageFrame(np.random.default_rng(0).random((256, 256, 3)))
    assert validate_frame(frame) is frame


def test_validate_frame_out_of_range():
    px = np.zeros((32, 32, 3))
    px[3, 4, 1] = 1.5
    with pytest.raises(RangeError):
        validate_frame(ImageFrame(px))


def test_validate_frame_too_small():
    with pytest.raises(ShapeError):
        validate_frame(ImageFrame(np.zeros((8, 8, 3))))


def test_validate_frame_checks_principal_point():
    K = CameraIntrinsics(50, 50, 40.0, 10.0)
    with pytest.raises(RangeError):
        validate_frame(ImageFrame(np.zeros((32, 32, 3)), intrinsics=K))


def test_frame_pixels_are_read_only(gray_frame):
    with pytest.raises(ValueError):
        gray_frame.pixels[0, 0, 0] = 1.0


def test_intrinsics_reject_nonpositive_focal():
    with pytest.raises(RangeError):
        CameraIntrinsics(0.0, 10.0, 1.0, 1.0)


def test_intrinsics_scaling_keeps_pixel_centers():
    K = CameraIntrinsics(100, 100, 127.5, 127.5)
    half = K.scaled(0.5, 0.5)
    assert (half.fx, half.cx) == (50.0, 63.5)


def test_pose_roundtrip():
    rng = np.random.default_rng(3)
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    p = Pose(q, rng.standard_normal(3))
    pts = rng.standard_normal((10, 3))
    np.testing.assert_allclose(p.inverse().apply(p.apply(pts)), pts, atol=1e-12)
    assert np.array_equal(Pose.from_matrix(p.matrix()).R, p.R)


def test_confidences_clamped():
    X = np.zeros((4, 4, 3))
    pair = PointMapPair(X, X, np.zeros((4, 4)), -np.ones((4, 4)))
    assert pair.C1.min() == 1e-8 and pair.C2.min() == 1e-8


def test_point_pair_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        PointMapPair(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)), np.ones((4, 4)), np.ones((4, 4)))


def test_one_directional_score():
    s = PairScore(0.9, None, 0.5)
    assert s.met3r == pytest.approx(0.1)


def test_pair_score_rejects_out_of_range():
    with pytest.raises(RangeError):
        PairScore(1.2, 0.0, 0.5)


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 1))
def test_pair_score_reconstruction_and_range(sf, sb, ov):
    s = PairScore(sf, sb, ov)
    assert 0.0 <= s.met3r <= 2.0
    assert combine_scores(s.s_forward, s.s_backward) == s.met3r
