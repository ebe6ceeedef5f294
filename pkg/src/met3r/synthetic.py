"""Analytic pinhole scenes used as ground-truth oracles.

A scene is a surface in world coordinates with a smooth procedural RGB
texture attached to it. Views are rendered by casting one ray per pixel, so
images, point maps and correspondences are all exact. Inconsistency is
injected by repainting a fraction of a view's pixels with a texture that no
other view shares.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import CameraIntrinsics, ImageFrame, Pose, RangeError

GEOMETRIES = ("plane", "random-cloud", "textured-height-field")
_N_WAVES = 6


def translation(x: float = 0.0, y: float = 0.0, z: float = 0.0) -> Pose:
    return Pose(np.eye(3), [x, y, z])


def rotation_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Ground-truth scene plus the two views of a synthetic pair.

    The plane sits at world ``z = depth_range[0]``; the height field oscillates
    inside ``depth_range``; the random cloud draws an independent per-pixel
    depth in ``depth_range`` for every frame index, so only its per-view
    geometry is meaningful. ``epsilon`` is the fraction of view-2 pixels
    repainted after consistent rendering.
    """

    geometry: str = "plane"
    width: int = 64
    height: int = 64
    intrinsics: CameraIntrinsics | None = None
    pose1: Pose = field(default_factory=Pose.identity)
    pose2: Pose = field(default_factory=lambda: translation(0.1))
    depth_range: tuple[float, float] = (2.0, 4.0)
    texture_seed: int = 0
    epsilon: float = 0.0

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise RangeError(f"unknown geometry {self.geometry!r}; expected one of {GEOMETRIES}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise RangeError(f"epsilon={self.epsilon} outside [0, 1]")
        near, far = self.depth_range
        if not 0 < near <= far:
            raise RangeError(f"bad depth range {self.depth_range}")
        if self.intrinsics is None:
            f = float(max(self.width, self.height))
            K = CameraIntrinsics(f, f, (self.width - 1) / 2, (self.height - 1) / 2)
            object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "depth_range", (float(near), float(far)))

    def at_resolution(self, width: int, height: int) -> "SyntheticSceneSpec":
        """Same scene and cameras with intrinsics rescaled to a new image size."""
        K = self.intrinsics.scaled(width / self.width, height / self.height)
        return replace(self, width=width, height=height, intrinsics=K)

    def to_dict(self) -> dict:
        K = self.intrinsics
        return {
            "geometry": self.geometry,
            "width": self.width,
            "height": self.height,
            "intrinsics": [K.fx, K.fy, K.cx, K.cy],
            "pose1": self.pose1.matrix().ravel().tolist(),
            "pose2": self.pose2.matrix().ravel().tolist(),
            "depth_range": list(self.depth_range),
            "texture_seed": self.texture_seed,
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSceneSpec":
        return cls(
            geometry=d["geometry"],
            width=int(d["width"]),
            height=int(d["height"]),
            intrinsics=CameraIntrinsics(*d["intrinsics"]),
            pose1=Pose.from_matrix(d["pose1"]),
            pose2=Pose.from_matrix(d["pose2"]),
            depth_range=tuple(d["depth_range"]),
            texture_seed=int(d.get("texture_seed", 0)),
            epsilon=float(d.get("epsilon", 0.0)),
        )


class _Texture:
    """Sum of random 3D sinusoids per channel, values inside (0.05, 0.95)."""

    def __init__(self, seed: Sequence[int]):
        rng = np.random.default_rng(list(seed))
        self.freq = rng.uniform(-4.0, 4.0, size=(3, _N_WAVES, 3))
        self.phase = rng.uniform(0.0, 2 * np.pi, size=(3, _N_WAVES))
        amp = rng.uniform(0.5, 1.0, size=(3, _N_WAVES))
        self.amp = 0.45 * amp / amp.sum(axis=1, keepdims=True)

    def __call__(self, world: np.ndarray) -> np.ndarray:
        out = np.empty(world.shape[:-1] + (3,))
        for c in range(3):
            arg = world @ self.freq[c].T + self.phase[c]
            out[..., c] = 0.5 + (self.amp[c] * np.sin(arg)).sum(axis=-1)
        return out


def _height_params(seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 7])
    return np.concatenate([rng.uniform(0.3, 0.8, 2), rng.uniform(0, 2 * np.pi, 2)])


def _height(scene: SyntheticSceneSpec, x, y):
    a, b, p, q = _height_params(scene.texture_seed)
    near, far = scene.depth_range
    amp = 0.5 * (far - near)
    sx, sy = np.sin(a * x + p), np.sin(b * y + q)
    h = near + amp * (1.0 + sx * sy)
    hx = amp * a * np.cos(a * x + p) * sy
    hy = amp * b * sx * np.cos(b * y + q)
    return h, hx, hy


def camera_rays(K: CameraIntrinsics, cols: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Camera-frame ray directions with unit z for (possibly fractional) pixel coordinates."""
    return np.stack([(cols - K.cx) / K.fx, (rows - K.cy) / K.fy, np.ones_like(cols, dtype=np.float64)], axis=-1)


def raycast(
    scene: SyntheticSceneSpec,
    pose: Pose,
    K: CameraIntrinsics,
    cols: np.ndarray,
    rows: np.ndarray,
    frame_index: int = 0,
) -> np.ndarray:
    """Camera-frame surface points hit by the rays through the given pixels.

    Rays that miss the surface (or hit it behind the camera) yield NaN.
    """
    d_cam = camera_rays(K, np.asarray(cols, dtype=np.float64), np.asarray(rows, dtype=np.float64))
    if scene.geometry == "random-cloud":
        rng = np.random.default_rng([scene.texture_seed, 11, frame_index])
        near, far = scene.depth_range
        z = rng.uniform(near, far, size=d_cam.shape[:-1])
        return d_cam * z[..., None]
    d_w = d_cam @ pose.R.T
    o = pose.t
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (scene.depth_range[0] - o[2]) / d_w[..., 2]
        if scene.geometry == "textured-height-field":
            # Newton iterations on o_z + s*d_z - h(o_xy + s*d_xy), from the plane at mid depth.
            s = (np.mean(scene.depth_range) - o[2]) / d_w[..., 2]
            for _ in range(60):
                x = o[0] + s * d_w[..., 0]
                y = o[1] + s * d_w[..., 1]
                h, hx, hy = _height(scene, x, y)
                g = o[2] + s * d_w[..., 2] - h
                dg = d_w[..., 2] - hx * d_w[..., 0] - hy * d_w[..., 1]
                step = g / dg
                s = s - step
                if np.all(np.abs(step[np.isfinite(step)]) < 1e-14):
                    break
    s = np.where(np.isfinite(s) & (s > 0), s, np.nan)
    return d_cam * s[..., None]


def surface_points(scene: SyntheticSceneSpec, pose: Pose, K: CameraIntrinsics, shape, frame_index: int = 0) -> np.ndarray:
    """Pixel-aligned camera-frame point map at pixel centers."""
    H, W = shape
    cols, rows = np.meshgrid(np.arange(W, dtype=np.float64), np.arange(H, dtype=np.float64))
    return raycast(scene, pose, K, cols, rows, frame_index)


def render_frame(
    scene: SyntheticSceneSpec,
    pose: Pose,
    frame_index: int = 0,
    epsilon: float = 0.0,
    repaint_seed: int | None = None,
    sequence_id: str = "",
) -> ImageFrame:
    """Render one view; ``epsilon`` of its pixels get a view-private texture."""
    K = scene.intrinsics
    shape = (scene.height, scene.width)
    cam = surface_points(scene, pose, K, shape, frame_index)
    if np.isnan(cam).any():
        raise RangeError("some camera rays miss the synthetic surface")
    world = pose.apply(cam)
    img = _Texture([scene.texture_seed, 1])(world)
    if epsilon > 0:
        key = frame_index if repaint_seed is None else repaint_seed
        rng = np.random.default_rng([scene.texture_seed, 3, key])
        n = int(round(epsilon * img.shape[0] * img.shape[1]))
        chosen = rng.permutation(img.shape[0] * img.shape[1])[:n]
        fresh = _Texture([scene.texture_seed, 5, key])(world)
        flat, fresh = img.reshape(-1, 3), fresh.reshape(-1, 3)
        flat[chosen] = fresh[chosen]
    return ImageFrame(np.clip(img, 0.0, 1.0), frame_index=frame_index, pose=pose,
                      intrinsics=K, sequence_id=sequence_id)


def render_pair(scene: SyntheticSceneSpec) -> tuple[ImageFrame, ImageFrame]:
    I1 = render_frame(scene, scene.pose1, frame_index=0)
    I2 = render_frame(scene, scene.pose2, frame_index=1, epsilon=scene.epsilon)
    return I1, I2


def trajectory(n_frames: int, step: float = 0.05, yaw_step: float = 0.0) -> list[Pose]:
    """Sideways dolly with optional yaw, starting at the world origin."""
    return [Pose(rotation_y(k * yaw_step), [k * step, 0.0, 0.0]) for k in range(n_frames)]


def render_sequence(
    scene: SyntheticSceneSpec,
    poses: Sequence[Pose],
    epsilons: Sequence[float] | float = 0.0,
    sequence_id: str = "",
) -> list[ImageFrame]:
    if np.isscalar(epsilons):
        epsilons = [float(epsilons)] * len(poses)
    return [
        render_frame(scene, p, frame_index=k, epsilon=e, sequence_id=sequence_id)
        for k, (p, e) in enumerate(zip(poses, epsilons))
    ]


def random_scene(seed: int, size: int = 64, geometry: str = "textured-height-field", epsilon: float = 0.0,
                 baseline: float = 0.1) -> SyntheticSceneSpec:
    """A random scene with a small sideways baseline and a slight yaw."""
    rng = np.random.default_rng([seed, 13])
    f = size * rng.uniform(0.9, 1.3)
    yaw = rng.uniform(-0.02, 0.02)
    near = rng.uniform(2.0, 3.0)
    return SyntheticSceneSpec(
        geometry=geometry,
        width=size,
        height=size,
        intrinsics=CameraIntrinsics(f, f, (size - 1) / 2, (size - 1) / 2),
        pose1=Pose.identity(),
        pose2=Pose(rotation_y(yaw), [baseline * rng.uniform(0.5, 1.0), 0.0, 0.0]),
        depth_range=(near, near + rng.uniform(0.5, 2.0)),
        texture_seed=seed,
        epsilon=epsilon,
    )
