"""Providers of point maps, dense features and keypoint correspondences.

Each provider kind is a small class with a single method; ``make_*`` builds
one from a config. Oracle kinds (synthetic, rgb, seeded random projection)
are pure. Process and cache kinds hold state and should be created once per
worker.

External-process protocol: the executable is launched with ``--model ID``
and receives newline-separated paths on stdin. Point and correspondence
requests carry two PNG paths, feature requests one, and the last line is the
output container path. Exit code zero means the container was written.
Point containers hold ``x1, x2, c1, c2``, feature containers ``feat`` and
correspondence containers ``matches`` (N x 4: u1, v1, u2, v2).
"""

from __future__ import annotations

import logging
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from . import container
from .core import (
    BackendUnavailable,
    CacheMiss,
    ConfigError,
    FeatureGrid,
    ImageFrame,
    PointMapPair,
    ShapeMismatch,
)
from .synthetic import SyntheticSceneSpec, raycast, surface_points

logger = logging.getLogger(__name__)

POINT_KINDS = ("external-process", "tensor-cache", "synthetic-pinhole")
FEATURE_KINDS = ("external-process", "tensor-cache", "rgb", "seeded-random-projection")
MATCH_KINDS = ("external-process", "tensor-cache", "synthetic")
CACHE_SUFFIX = ".m3t"


@dataclass(frozen=True)
class PointMapBackendConfig:
    kind: str = "synthetic-pinhole"
    executable: str | None = None
    model_id: str = "dust3r"
    cache_dir: str | None = None
    scene: SyntheticSceneSpec | None = None
    timeout: float = 600.0

    def __post_init__(self):
        if self.kind not in POINT_KINDS:
            raise ConfigError(f"unknown point backend {self.kind!r}")
        if self.kind == "external-process" and not self.executable:
            raise ConfigError("external-process point backend needs an executable")
        if self.kind == "tensor-cache" and not self.cache_dir:
            raise ConfigError("tensor-cache point backend needs cache_dir")


@dataclass(frozen=True)
class FeatureBackendConfig:
    kind: str = "rgb"
    D: int = 3
    upsample: bool = True
    seed: int = 0
    executable: str | None = None
    model_id: str = "dino_vits16+featup"
    cache_dir: str | None = None
    timeout: float = 600.0

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ConfigError(f"unknown feature backend {self.kind!r}")
        if self.kind == "rgb" and self.D != 3:
            object.__setattr__(self, "D", 3)
        if self.D < 1:
            raise ConfigError("feature channel count must be >= 1")
        if self.kind == "external-process" and not self.executable:
            raise ConfigError("external-process feature backend needs an executable")
        if self.kind == "tensor-cache" and not self.cache_dir:
            raise ConfigError("tensor-cache feature backend needs cache_dir")


@dataclass(frozen=True)
class CorrespondenceBackendConfig:
    kind: str = "synthetic"
    n_samples: int = 100
    seed: int = 0
    scene: SyntheticSceneSpec | None = None
    executable: str | None = None
    model_id: str = "sift"
    cache_dir: str | None = None
    timeout: float = 600.0

    def __post_init__(self):
        if self.kind not in MATCH_KINDS:
            raise ConfigError(f"unknown correspondence backend {self.kind!r}")


def point_cache_path(root, sequence_id: str, i: int, j: int) -> Path:
    return Path(root) / (sequence_id or "_") / f"{i}_{j}{CACHE_SUFFIX}"


def feature_cache_path(root, sequence_id: str, i: int) -> Path:
    return Path(root) / (sequence_id or "_") / f"{i}{CACHE_SUFFIX}"


def match_cache_path(root, sequence_id: str, i: int, j: int) -> Path:
    return point_cache_path(root, sequence_id, i, j)


def write_point_cache(root, sequence_id: str, i: int, j: int, pair: PointMapPair, dtype=np.float64) -> Path:
    path = point_cache_path(root, sequence_id, i, j)
    container.write(path, {
        "x1": pair.X1.astype(dtype), "x2": pair.X2.astype(dtype),
        "c1": pair.C1.astype(dtype), "c2": pair.C2.astype(dtype),
    })
    return path


def write_feature_cache(root, sequence_id: str, i: int, feat: np.ndarray) -> Path:
    path = feature_cache_path(root, sequence_id, i)
    container.write(path, {"feat": np.asarray(feat)})
    return path


def _pair_from_arrays(arrays: dict, shape) -> PointMapPair:
    missing = {"x1", "x2", "c1", "c2"} - arrays.keys()
    if missing:
        raise ShapeMismatch(f"point container lacks arrays {sorted(missing)}")
    pair = PointMapPair(arrays["x1"], arrays["x2"], arrays["c1"], arrays["c2"])
    if pair.shape != tuple(shape):
        raise ShapeMismatch(f"point maps are {pair.shape}, images are {tuple(shape)}")
    return pair


def _run_external(executable: str, model_id: str, inputs: list[ImageFrame], timeout: float) -> dict:
    with tempfile.TemporaryDirectory(prefix="met3r_") as tmp:
        lines = []
        for k, frame in enumerate(inputs):
            path = Path(tmp) / f"in{k}.png"
            Image.fromarray(np.round(frame.pixels * 255).astype(np.uint8)).save(path)
            lines.append(str(path))
        out = Path(tmp) / "out.m3t"
        lines.append(str(out))
        cmd = shlex.split(executable) + ["--model", model_id]
        try:
            proc = subprocess.run(cmd, input="\n".join(lines) + "\n", capture_output=True,
                                  text=True, timeout=timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise BackendUnavailable(f"failed to run {cmd[0]}: {exc}") from exc
        if proc.returncode != 0:
            raise BackendUnavailable(
                f"{cmd[0]} exited with {proc.returncode}: {proc.stderr.strip()[-500:]}"
            )
        try:
            return container.read(out)
        except (OSError, container.ContainerError) as exc:
            raise BackendUnavailable(f"{cmd[0]} produced no readable container: {exc}") from exc


def _same_shape(I1: ImageFrame, I2: ImageFrame) -> None:
    if I1.shape != I2.shape:
        raise ShapeMismatch(f"frames differ in resolution: {I1.shape} vs {I2.shape}")


class SyntheticPointBackend:
    """Exact point maps ray-cast from the frames' own poses and intrinsics."""

    def __init__(self, scene: SyntheticSceneSpec | None):
        self.scene = scene

    def infer(self, I1: ImageFrame, I2: ImageFrame) -> PointMapPair:
        _same_shape(I1, I2)
        if self.scene is None:
            raise BackendUnavailable("synthetic point backend has no scene")
        for f in (I1, I2):
            if f.pose is None or f.intrinsics is None:
                raise BackendUnavailable("synthetic point backend needs frame poses and intrinsics")
        P1 = surface_points(self.scene, I1.pose, I1.intrinsics, I1.shape, I1.frame_index)
        P2 = surface_points(self.scene, I2.pose, I2.intrinsics, I2.shape, I2.frame_index)
        cam1_from_cam2 = I1.pose.inverse().compose(I2.pose)
        ones = np.ones(I1.shape)
        return PointMapPair(P1, cam1_from_cam2.apply(P2), ones, ones, reference=1)


class CachePointBackend:
    def __init__(self, cache_dir):
        self.root = Path(cache_dir)

    def infer(self, I1: ImageFrame, I2: ImageFrame) -> PointMapPair:
        _same_shape(I1, I2)
        path = point_cache_path(self.root, I1.sequence_id, I1.frame_index, I2.frame_index)
        if not path.exists():
            raise CacheMiss(f"no cached point maps for ({I1.sequence_id!r}, {I1.frame_index}, {I2.frame_index})")
        return _pair_from_arrays(container.read(path), I1.shape)


class ExternalPointBackend:
    def __init__(self, executable: str, model_id: str, timeout: float = 600.0):
        self.executable, self.model_id, self.timeout = executable, model_id, timeout

    def infer(self, I1: ImageFrame, I2: ImageFrame) -> PointMapPair:
        _same_shape(I1, I2)
        arrays = _run_external(self.executable, self.model_id, [I1, I2], self.timeout)
        return _pair_from_arrays(arrays, I1.shape)


def make_point_backend(cfg: PointMapBackendConfig):
    if cfg.kind == "synthetic-pinhole":
        return SyntheticPointBackend(cfg.scene)
    if cfg.kind == "tensor-cache":
        return CachePointBackend(cfg.cache_dir)
    return ExternalPointBackend(cfg.executable, cfg.model_id, cfg.timeout)


def point_backend_infer(cfg: PointMapBackendConfig, I1: ImageFrame, I2: ImageFrame) -> PointMapPair:
    """Point maps of ``I1`` and ``I2``, both in the camera frame of ``I1``."""
    return make_point_backend(cfg).infer(I1, I2)


def resize_grid(values: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of an HxWxD grid (half-pixel centers)."""
    values = np.asarray(values, dtype=np.float64)
    chunks = [
        cv2.resize(values[..., k:k + 512], (width, height), interpolation=cv2.INTER_LINEAR).reshape(height, width, -1)
        for k in range(0, values.shape[2], 512)
    ]
    return np.concatenate(chunks, axis=2)


def _fit_features(values: np.ndarray, frame: ImageFrame, upsample: bool, source: str) -> FeatureGrid:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 2:
        values = values[..., None]
    if values.shape[:2] != frame.shape:
        if not upsample:
            raise ShapeMismatch(f"{source} features are {values.shape[:2]}, image is {frame.shape}")
        values = resize_grid(values, *frame.shape)
    return FeatureGrid(values, source=source)


class RgbFeatures:
    def extract(self, I: ImageFrame) -> FeatureGrid:
        return FeatureGrid(I.pixels, source="rgb")


class RandomProjectionFeatures:
    """A fixed seeded linear map from RGB to D channels."""

    def __init__(self, D: int, seed: int):
        rng = np.random.default_rng([seed, 17])
        self.weights = rng.standard_normal((3, D)) / np.sqrt(3.0)

    def extract(self, I: ImageFrame) -> FeatureGrid:
        return FeatureGrid(I.pixels @ self.weights, source="randproj")


class CacheFeatures:
    def __init__(self, cache_dir, upsample: bool):
        self.root, self.upsample = Path(cache_dir), upsample

    def extract(self, I: ImageFrame) -> FeatureGrid:
        path = feature_cache_path(self.root, I.sequence_id, I.frame_index)
        if not path.exists():
            raise CacheMiss(f"no cached features for ({I.sequence_id!r}, {I.frame_index})")
        arrays = container.read(path)
        if "feat" not in arrays:
            raise ShapeMismatch(f"{path} has no 'feat' array")
        return _fit_features(arrays["feat"], I, self.upsample, "cache")


class ExternalFeatures:
    def __init__(self, executable: str, model_id: str, upsample: bool, timeout: float = 600.0):
        self.executable, self.model_id = executable, model_id
        self.upsample, self.timeout = upsample, timeout

    def extract(self, I: ImageFrame) -> FeatureGrid:
        arrays = _run_external(self.executable, self.model_id, [I], self.timeout)
        if "feat" not in arrays:
            raise BackendUnavailable("external feature backend returned no 'feat' array")
        return _fit_features(arrays["feat"], I, self.upsample, self.model_id)


def make_feature_backend(cfg: FeatureBackendConfig):
    if cfg.kind == "rgb":
        return RgbFeatures()
    if cfg.kind == "seeded-random-projection":
        return RandomProjectionFeatures(cfg.D, cfg.seed)
    if cfg.kind == "tensor-cache":
        return CacheFeatures(cfg.cache_dir, cfg.upsample)
    return ExternalFeatures(cfg.executable, cfg.model_id, cfg.upsample, cfg.timeout)


def feature_backend_extract(cfg: FeatureBackendConfig, I: ImageFrame) -> FeatureGrid:
    return make_feature_backend(cfg).extract(I)


class SyntheticMatcher:
    """Ground-truth correspondences at seeded, resolution-independent locations.

    Sample locations are drawn in normalized image coordinates, so the same
    seed yields the same surface points at every resolution. A sample is kept
    when it lands inside view 2 and is not occluded there.
    """

    def __init__(self, scene: SyntheticSceneSpec | None, n_samples: int = 100, seed: int = 0):
        self.scene, self.n, self.seed = scene, n_samples, seed

    def match(self, I1: ImageFrame, I2: ImageFrame) -> np.ndarray:
        if self.scene is None:
            raise BackendUnavailable("synthetic matcher has no scene")
        for f in (I1, I2):
            if f.pose is None or f.intrinsics is None:
                raise BackendUnavailable("synthetic matcher needs frame poses and intrinsics")
        rng = np.random.default_rng([self.seed, 19])
        H1, W1 = I1.shape
        H2, W2 = I2.shape
        found: list[np.ndarray] = []
        total = 0
        for _ in range(20):
            ab = rng.random((max(4 * self.n, 64), 2))
            u1 = ab[:, 0] * W1 - 0.5
            v1 = ab[:, 1] * H1 - 0.5
            P1 = raycast(self.scene, I1.pose, I1.intrinsics, u1, v1, I1.frame_index)
            P2 = I2.pose.inverse().compose(I1.pose).apply(P1)
            K2 = I2.intrinsics
            with np.errstate(divide="ignore", invalid="ignore"):
                u2 = K2.fx * P2[:, 0] / P2[:, 2] + K2.cx
                v2 = K2.fy * P2[:, 1] / P2[:, 2] + K2.cy
            ok = np.isfinite(P1).all(axis=1) & (P2[:, 2] > 0)
            ok &= (u2 >= -0.5) & (u2 < W2 - 0.5) & (v2 >= -0.5) & (v2 < H2 - 0.5)
            if self.scene.geometry != "random-cloud" and ok.any():
                hit = raycast(self.scene, I2.pose, K2, np.where(ok, u2, 0.0), np.where(ok, v2, 0.0), I2.frame_index)
                with np.errstate(invalid="ignore"):
                    ok &= np.abs(hit[:, 2] - P2[:, 2]) <= 1e-6 * np.abs(P2[:, 2])
            rows = np.stack([u1, v1, u2, v2], axis=1)[ok]
            found.append(rows)
            total += len(rows)
            if total >= self.n:
                break
        if not found:
            return np.zeros((0, 4))
        return np.concatenate(found)[: self.n]


class CacheMatcher:
    def __init__(self, cache_dir):
        self.root = Path(cache_dir)

    def match(self, I1: ImageFrame, I2: ImageFrame) -> np.ndarray:
        path = match_cache_path(self.root, I1.sequence_id, I1.frame_index, I2.frame_index)
        if not path.exists():
            raise CacheMiss(f"no cached matches for ({I1.sequence_id!r}, {I1.frame_index}, {I2.frame_index})")
        return np.asarray(container.read(path)["matches"], dtype=np.float64).reshape(-1, 4)


class ExternalMatcher:
    def __init__(self, executable: str, model_id: str, timeout: float = 600.0):
        self.executable, self.model_id, self.timeout = executable, model_id, timeout

    def match(self, I1: ImageFrame, I2: ImageFrame) -> np.ndarray:
        arrays = _run_external(self.executable, self.model_id, [I1, I2], self.timeout)
        if "matches" not in arrays:
            raise BackendUnavailable("external matcher returned no 'matches' array")
        return np.asarray(arrays["matches"], dtype=np.float64).reshape(-1, 4)


def make_correspondence_backend(cfg: CorrespondenceBackendConfig):
    if cfg.kind == "synthetic":
        return SyntheticMatcher(cfg.scene, cfg.n_samples, cfg.seed)
    if cfg.kind == "tensor-cache":
        return CacheMatcher(cfg.cache_dir)
    return ExternalMatcher(cfg.executable, cfg.model_id, cfg.timeout)


def correspondence_backend_match(cfg: CorrespondenceBackendConfig, I1: ImageFrame, I2: ImageFrame) -> np.ndarray:
    """Matches as an (N, 4) array of (u1, v1, u2, v2) pixel coordinates."""
    return make_correspondence_backend(cfg).match(I1, I2)
