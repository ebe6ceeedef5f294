import sys
import textwrap

import numpy as np
import pytest

from met3r.backends import (
    CorrespondenceBackendConfig,
    FeatureBackendConfig,
    PointMapBackendConfig,
    correspondence_backend_match,
    feature_backend_extract,
    point_backend_infer,
    write_feature_cache,
    write_point_cache,
)
from met3r.core import BackendUnavailable, CacheMiss, ConfigError, ImageFrame, Pose, ShapeMismatch
from met3r.synthetic import SyntheticSceneSpec, render_frame, render_pair, translation


@pytest.fixture
def plane():
    return SyntheticSceneSpec(geometry="plane", width=48, height=40, depth_range=(2.0, 2.0))


def test_identical_poses_give_identical_maps(plane):
    I = render_frame(plane, Pose.identity())
    pair = point_backend_infer(PointMapBackendConfig(scene=plane), I, I)
    assert np.array_equal(pair.X1, pair.X2)
    assert np.all(pair.C1 == 1) and np.all(pair.C2 == 1)
    assert np.all(pair.X1[..., 2] == 2.0)


def test_translated_view_is_rigidly_offset(plane):
    # Plane at z=2 seen from x=0.1: each pixel's ray hits the plane at depth 2 in
    # both cameras, so in camera-1 coordinates X2 = X1 + (0.1, 0, 0).
    I1 = render_frame(plane, Pose.identity(), frame_index=0)
    I2 = render_frame(plane, translation(0.1), frame_index=1)
    pair = point_backend_infer(PointMapBackendConfig(scene=plane), I1, I2)
    np.testing.assert_allclose(pair.X2 - pair.X1, np.broadcast_to([0.1, 0, 0], pair.X1.shape), atol=1e-12)


@pytest.mark.parametrize("geometry", ["plane", "textured-height-field", "random-cloud"])
def test_point_maps_project_onto_own_pixels(geometry):
    scene = SyntheticSceneSpec(geometry=geometry, width=40, height=32, texture_seed=4)
    I1, I2 = render_pair(scene)
    pair = point_backend_infer(PointMapBackendConfig(scene=scene), I1, I2)
    K = scene.intrinsics
    X, Y, Z = np.moveaxis(pair.X1, -1, 0)
    rows, cols = np.mgrid[0:32, 0:40]
    assert np.abs(K.fx * X / Z + K.cx - cols).max() < 1e-6
    assert np.abs(K.fy * Y / Z + K.cy - rows).max() < 1e-6


def test_height_field_points_lie_on_surface():
    from met3r.synthetic import _height

    scene = SyntheticSceneSpec(geometry="textured-height-field", width=32, height=32, texture_seed=2)
    I = render_frame(scene, translation(0.3, -0.1))
    pair = point_backend_infer(PointMapBackendConfig(scene=scene), I, I)
    world = I.pose.apply(pair.X1)
    h, _, _ = _height(scene, world[..., 0], world[..., 1])
    assert np.abs(world[..., 2] - h).max() < 1e-9


def test_synthetic_backend_is_deterministic(plane):
    I1, I2 = render_pair(plane)
    a = point_backend_infer(PointMapBackendConfig(scene=plane), I1, I2)
    b = point_backend_infer(PointMapBackendConfig(scene=plane), I1, I2)
    assert np.array_equal(a.X2, b.X2)


def test_synthetic_backend_needs_poses(plane):
    I = ImageFrame(np.zeros((40, 48, 3)))
    with pytest.raises(BackendUnavailable):
        point_backend_infer(PointMapBackendConfig(scene=plane), I, I)


def test_resolution_mismatch(plane):
    with pytest.raises(ShapeMismatch):
        point_backend_infer(PointMapBackendConfig(scene=plane), ImageFrame(np.zeros((40, 48, 3))),
                            ImageFrame(np.zeros((32, 48, 3))))


def test_cache_roundtrip_and_miss(tmp_path, plane):
    I1, I2 = render_pair(plane)
    I1 = ImageFrame(I1.pixels, frame_index=3, sequence_id="seq0")
    I2 = ImageFrame(I2.pixels, frame_index=4, sequence_id="seq0")
    cfg = PointMapBackendConfig(kind="tensor-cache", cache_dir=str(tmp_path))
    with pytest.raises(CacheMiss):
        point_backend_infer(cfg, I1, I2)
    rng = np.random.default_rng(0)
    X1, X2 = rng.random((40, 48, 3)), rng.random((40, 48, 3))
    C = rng.random((40, 48)) + 0.5
    from met3r.core import PointMapPair

    write_point_cache(tmp_path, "seq0", 3, 4, PointMapPair(X1, X2, C, C))
    pair = point_backend_infer(cfg, I1, I2)
    assert np.array_equal(pair.X1, X1) and np.array_equal(pair.X2, X2) and np.array_equal(pair.C1, C)
    with pytest.raises(CacheMiss):
        point_backend_infer(cfg, I2, I1)


def test_config_validation():
    with pytest.raises(ConfigError):
        PointMapBackendConfig(kind="magic")
    with pytest.raises(ConfigError):
        PointMapBackendConfig(kind="tensor-cache")
    assert FeatureBackendConfig(kind="rgb", D=64).D == 3


def test_rgb_features_are_pixels(gray_frame):
    F = feature_backend_extract(FeatureBackendConfig(kind="rgb"), gray_frame)
    assert np.array_equal(F.values, gray_frame.pixels) and F.D == 3


def test_random_projection_deterministic(rng):
    I = ImageFrame(rng.random((20, 24, 3)))
    cfg = FeatureBackendConfig(kind="seeded-random-projection", D=16, seed=5)
    a, b = feature_backend_extract(cfg, I), feature_backend_extract(cfg, I)
    assert a.D == 16 and np.array_equal(a.values, b.values)
    other = feature_backend_extract(FeatureBackendConfig(kind="seeded-random-projection", D=16, seed=6), I)
    assert not np.array_equal(a.values, other.values)
    # linear in RGB
    np.testing.assert_allclose(
        feature_backend_extract(cfg, ImageFrame(I.pixels * 0.5)).values, 0.5 * a.values, atol=1e-12
    )


def test_feature_cache_upsample(tmp_path, rng):
    I = ImageFrame(rng.random((32, 32, 3)), frame_index=2, sequence_id="s")
    write_feature_cache(tmp_path, "s", 2, np.ones((8, 8, 5), np.float32))
    F = feature_backend_extract(FeatureBackendConfig(kind="tensor-cache", D=5, cache_dir=str(tmp_path)), I)
    assert F.values.shape == (32, 32, 5)
    np.testing.assert_allclose(F.values, 1.0)
    with pytest.raises(ShapeMismatch):
        feature_backend_extract(
            FeatureBackendConfig(kind="tensor-cache", D=5, cache_dir=str(tmp_path), upsample=False), I
        )


STUB = textwrap.dedent(
    """
    import sys
    import numpy as np
    from PIL import Image
    from met3r import container

    mode = sys.argv[1]
    lines = sys.stdin.read().split("\\n")
    paths = [p for p in lines if p]
    *inputs, out = paths
    if mode == "fail":
        sys.exit(4)
    h, w = np.asarray(Image.open(inputs[0])).shape[:2]
    if mode == "points":
        z = np.full((h, w), 2.0)
        rows, cols = np.mgrid[0:h, 0:w]
        x = np.stack([(cols - (w - 1) / 2) * z / 50, (rows - (h - 1) / 2) * z / 50, z], -1)
        container.write(out, {"x1": x, "x2": x, "c1": np.ones((h, w)), "c2": np.ones((h, w))})
    elif mode == "lowres":
        container.write(out, {"feat": np.ones((h // 4, w // 4, 8), np.float32)})
    elif mode == "matches":
        container.write(out, {"matches": np.array([[1.0, 2.0, 3.0, 4.0]])})
    """
)


@pytest.fixture
def stub(tmp_path):
    path = tmp_path / "stub.py"
    path.write_text(STUB)
    return lambda mode: f"{sys.executable} {path} {mode}"


def test_external_point_backend(stub, rng):
    I = ImageFrame(rng.random((24, 32, 3)))
    pair = point_backend_infer(PointMapBackendConfig(kind="external-process", executable=stub("points")), I, I)
    assert pair.shape == (24, 32) and np.all(pair.X1[..., 2] == 2.0)


def test_external_failure_is_backend_unavailable(stub, rng):
    I = ImageFrame(rng.random((24, 32, 3)))
    with pytest.raises(BackendUnavailable):
        point_backend_infer(PointMapBackendConfig(kind="external-process", executable=stub("fail")), I, I)
    with pytest.raises(BackendUnavailable):
        point_backend_infer(PointMapBackendConfig(kind="external-process", executable="/nonexistent/exe"), I, I)


def test_external_lowres_features(stub, rng):
    I = ImageFrame(rng.random((256, 256, 3)))
    cfg = FeatureBackendConfig(kind="external-process", D=8, executable=stub("lowres"), upsample=False)
    with pytest.raises(ShapeMismatch):
        feature_backend_extract(cfg, I)
    up = FeatureBackendConfig(kind="external-process", D=8, executable=stub("lowres"), upsample=True)
    assert feature_backend_extract(up, I).values.shape == (256, 256, 8)


def test_external_matcher(stub, rng):
    I = ImageFrame(rng.random((24, 32, 3)))
    m = correspondence_backend_match(CorrespondenceBackendConfig(kind="external-process", executable=stub("matches")), I, I)
    assert m.tolist() == [[1.0, 2.0, 3.0, 4.0]]


def _project(P_world, pose, K):
    cam = pose.inverse().apply(P_world)
    return np.stack([K.fx * cam[:, 0] / cam[:, 2] + K.cx, K.fy * cam[:, 1] / cam[:, 2] + K.cy], 1)


def test_synthetic_matches_are_exact():
    scene = SyntheticSceneSpec(geometry="textured-height-field", width=64, height=64, texture_seed=1)
    I1, I2 = render_pair(scene)
    m = correspondence_backend_match(CorrespondenceBackendConfig(scene=scene, n_samples=100), I1, I2)
    assert m.shape == (100, 4)
    # independent check: re-project the surface point behind each u1,v1 through camera 2
    from met3r.synthetic import raycast

    P = raycast(scene, I1.pose, I1.intrinsics, m[:, 0], m[:, 1])
    uv2 = _project(I1.pose.apply(P), I2.pose, I2.intrinsics)
    np.testing.assert_allclose(uv2, m[:, 2:], atol=1e-9)


def test_disjoint_views_have_no_matches():
    scene = SyntheticSceneSpec(geometry="plane", width=32, height=32, pose2=translation(50.0))
    I1, I2 = render_pair(scene)
    m = correspondence_backend_match(CorrespondenceBackendConfig(scene=scene), I1, I2)
    assert m.shape == (0, 4)


def test_same_image_matches_identity():
    scene = SyntheticSceneSpec(geometry="plane", width=32, height=32)
    I = render_frame(scene, Pose.identity())
    m = correspondence_backend_match(CorrespondenceBackendConfig(scene=scene, n_samples=20), I, I)
    assert len(m) == 20
    np.testing.assert_allclose(m[:, :2], m[:, 2:], atol=1e-9)


def test_injected_inconsistency_fraction():
    scene = SyntheticSceneSpec(width=40, height=40)
    clean = render_frame(scene, Pose.identity(), frame_index=1)
    dirty = render_frame(scene, Pose.identity(), frame_index=1, epsilon=0.25)
    changed = np.any(clean.pixels != dirty.pixels, axis=-1).mean()
    assert changed == pytest.approx(0.25, abs=1e-3)
