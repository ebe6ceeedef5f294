"""Pose-dependent epipolar baselines: SED and thresholded SED."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import CameraIntrinsics, ConfigError, DegeneratePose, NoMatches, Pose, RangeError
from .geometry import lower_median

MIN_BASELINE = 1e-9
RANK_TOL = 1e-6


def skew(t) -> np.ndarray:
    x, y, z = np.asarray(t, dtype=np.float64)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


@dataclass(frozen=True)
class EpipolarSetup:
    """Fundamental matrix mapping image-1 pixels to epipolar lines in image 2."""

    F: np.ndarray

    def __post_init__(self):
        F = np.array(self.F, dtype=np.float64).reshape(3, 3)
        sv = np.linalg.svd(F, compute_uv=False)
        if sv[0] == 0 or sv[2] / sv[0] >= RANK_TOL:
            raise RangeError(f"fundamental matrix is not rank 2 (singular values {sv})")
        F.flags.writeable = False
        object.__setattr__(self, "F", F)


@dataclass(frozen=True)
class TsedThresholds:
    Te: float = 2.0
    Tm: int = 10

    def __post_init__(self):
        if not self.Te > 0 or self.Tm < 1:
            raise ConfigError(f"invalid TSED thresholds Te={self.Te}, Tm={self.Tm}")


def fundamental_from_pose(pose1: Pose, pose2: Pose, K1: CameraIntrinsics, K2: CameraIntrinsics) -> EpipolarSetup:
    """F = K2^-T [t]x R K1^-1 for the camera-1-to-camera-2 motion, unit Frobenius norm."""
    rel = pose2.inverse().compose(pose1)
    if np.linalg.norm(rel.t) < MIN_BASELINE:
        raise DegeneratePose("cameras share a center; the fundamental matrix is undefined")
    E = skew(rel.t) @ rel.R
    F = np.linalg.inv(K2.matrix()).T @ E @ np.linalg.inv(K1.matrix())
    return EpipolarSetup(F / np.linalg.norm(F))


def _homogeneous(uv: np.ndarray) -> np.ndarray:
    return np.hstack([uv, np.ones((uv.shape[0], 1))])


def symmetric_epipolar_distances(matches, setup: EpipolarSetup) -> np.ndarray:
    """Per-match mean of point-to-epipolar-line distances in both images, in pixels."""
    m = np.asarray(matches, dtype=np.float64).reshape(-1, 4)
    x1, x2 = _homogeneous(m[:, :2]), _homogeneous(m[:, 2:])
    l2 = x1 @ setup.F.T  # F x1
    l1 = x2 @ setup.F  # F^T x2
    alg = np.einsum("ij,ij->i", x2, l2)
    d2 = np.abs(alg) / np.hypot(l2[:, 0], l2[:, 1])
    d1 = np.abs(alg) / np.hypot(l1[:, 0], l1[:, 1])
    return 0.5 * (d1 + d2)


def sed_pair(matches, setup: EpipolarSetup) -> float:
    d = symmetric_epipolar_distances(matches, setup)
    if d.size == 0:
        raise NoMatches("SED needs at least one match")
    return float(d.mean())


def tsed_pair(matches, setup: EpipolarSetup, thr: TsedThresholds = TsedThresholds()) -> bool:
    """Consistent iff there are at least Tm matches and their lower-median distance is below Te."""
    d = symmetric_epipolar_distances(matches, setup)
    if d.size < thr.Tm:
        return False
    return lower_median(d) < thr.Te


def tsed_sequence(flags: Sequence[bool | None]) -> float | None:
    """Fraction of evaluable consecutive pairs judged consistent."""
    usable = [bool(f) for f in flags if f is not None]
    if not usable:
        return None
    return sum(usable) / len(usable)
