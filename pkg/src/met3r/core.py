"""Shared value types and error classes.

Every array held by these types is copied on construction and marked
read-only, so instances can be passed between threads and processes freely.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

MIN_SIDE = 16
CONFIDENCE_FLOOR = 1e-8
SENTINEL = -10000.0


class Met3rError(Exception):
    """Base class for all errors raised by this package."""


class RangeError(Met3rError, ValueError):
    pass


class ShapeError(Met3rError, ValueError):
    pass


class ShapeMismatch(ShapeError):
    pass


class BackendUnavailable(Met3rError):
    pass


class CacheMiss(Met3rError, KeyError):
    pass


class DegenerateGeometry(Met3rError):
    pass


class EmptyOverlap(Met3rError):
    pass


class DegeneratePose(Met3rError):
    pass


class NoMatches(Met3rError):
    pass


class EmptySequence(Met3rError):
    pass


class CorruptImage(Met3rError):
    pass


class ConfigError(Met3rError):
    pass


def _frozen(a, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels; pixel (col, row) has its center at (col, row)."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise RangeError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def check_bounds(self, width: int, height: int) -> "CameraIntrinsics":
        if not (0 <= self.cx < width and 0 <= self.cy < height):
            raise RangeError(
                f"principal point ({self.cx}, {self.cy}) outside {width}x{height} image"
            )
        return self

    def scaled(self, sx: float, sy: float) -> "CameraIntrinsics":
        """Intrinsics after resizing the image by (sx, sy), pixel-center convention."""
        return CameraIntrinsics(
            fx=self.fx * sx,
            fy=self.fy * sy,
            cx=(self.cx + 0.5) * sx - 0.5,
            cy=(self.cy + 0.5) * sy - 0.5,
        )


@dataclass(frozen=True)
class Pose:
    """Rigid world-from-camera transform: x_world = R @ x_cam + t."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", _frozen(self.R).reshape(3, 3))
        object.__setattr__(self, "t", _frozen(self.t).reshape(3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64).reshape(-1)
        if m.size not in (12, 16):
            raise ShapeError(f"pose needs 12 or 16 values, got {m.size}")
        m = m[:12].reshape(3, 4)
        return cls(m[:, :3], m[:, 3])

    def matrix(self) -> np.ndarray:
        return np.hstack([self.R, self.t[:, None]])

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.t)

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other, i.e. apply `other` first."""
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.R.T + self.t


@dataclass(frozen=True)
class ImageFrame:
    """An RGB image in [0, 1] with optional camera metadata.

    ``sequence_id`` is only used to key cached backend outputs.
    """

    pixels: np.ndarray
    frame_index: int = 0
    pose: Pose | None = None
    intrinsics: CameraIntrinsics | None = None
    sequence_id: str = ""

    def __post_init__(self):
        px = _frozen(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ShapeError(f"pixels must be HxWx3, got shape {px.shape}")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[:2]


def validate_frame(frame: ImageFrame) -> ImageFrame:
    """Return ``frame`` unchanged if its pixels and size are legal."""
    if frame.height < MIN_SIDE or frame.width < MIN_SIDE:
        raise ShapeError(
            f"frame is {frame.width}x{frame.height}, minimum is {MIN_SIDE}x{MIN_SIDE}"
        )
    px = frame.pixels
    if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
        raise RangeError("pixel values must lie in [0, 1]")
    if frame.intrinsics is not None:
        frame.intrinsics.check_bounds(frame.width, frame.height)
    return frame


@dataclass(frozen=True)
class PointMapPair:
    """Two pixel-aligned point maps, both in the camera frame of ``reference``.

    Confidences are clamped below at ``CONFIDENCE_FLOOR``.
    """

    X1: np.ndarray
    X2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    reference: int = 1

    def __post_init__(self):
        X1, X2 = _frozen(self.X1), _frozen(self.X2)
        C1 = np.maximum(np.asarray(self.C1, dtype=np.float64), CONFIDENCE_FLOOR)
        C2 = np.maximum(np.asarray(self.C2, dtype=np.float64), CONFIDENCE_FLOOR)
        if X1.ndim != 3 or X1.shape[2] != 3:
            raise ShapeMismatch(f"X1 must be HxWx3, got {X1.shape}")
        if X2.shape != X1.shape or C1.shape != X1.shape[:2] or C2.shape != X1.shape[:2]:
            raise ShapeMismatch(
                f"inconsistent point map shapes: X1 {X1.shape}, X2 {X2.shape}, "
                f"C1 {C1.shape}, C2 {C2.shape}"
            )
        object.__setattr__(self, "X1", X1)
        object.__setattr__(self, "X2", X2)
        object.__setattr__(self, "C1", _frozen(C1))
        object.__setattr__(self, "C2", _frozen(C2))

    @property
    def shape(self) -> tuple[int, int]:
        return self.X1.shape[:2]


@dataclass(frozen=True)
class FeatureGrid:
    values: np.ndarray
    source: str = "unknown"

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim == 2:
            v = _frozen(v[:, :, None])
        if v.ndim != 3 or v.shape[2] < 1:
            raise ShapeError(f"feature grid must be HxWxD, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise RangeError("feature grid contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def D(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]


@dataclass(frozen=True)
class ProjectionResult:
    """Rasterized attributes in the reference view.

    ``index`` holds the linear source-point index that won each pixel (-1 where
    uncovered). ``depth`` is +inf where uncovered.
    """

    attributes: np.ndarray
    depth: np.ndarray
    mask: np.ndarray
    sentinel: float = SENTINEL
    index: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "attributes", _frozen(self.attributes))
        object.__setattr__(self, "depth", _frozen(self.depth))
        object.__setattr__(self, "mask", _frozen(self.mask, dtype=bool))
        if self.index is not None:
            object.__setattr__(self, "index", _frozen(self.index, dtype=np.int64))
        if self.attributes.shape[:2] != self.mask.shape or self.depth.shape != self.mask.shape:
            raise ShapeMismatch("attributes, depth and mask must share spatial dims")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


def combine_scores(s_forward: float, s_backward: float | None) -> float:
    """Symmetric score: 1 - mean of the directional similarities."""
    if s_backward is None:
        return 1.0 - s_forward
    return 1.0 - 0.5 * (s_forward + s_backward)


@dataclass(frozen=True)
class PairScore:
    """Scores for one image pair.

    ``variants`` may hold psnr, ssim, unmasked_met3r, sed and tsed_consistent.
    """

    s_forward: float
    s_backward: float | None
    overlap_fraction: float
    variants: Mapping[str, float | bool | None] = field(default_factory=dict)
    met3r: float = field(init=False)

    def __post_init__(self):
        for name in ("s_forward", "s_backward"):
            s = getattr(self, name)
            if s is not None and not -1.0 <= s <= 1.0:
                raise RangeError(f"{name}={s} outside [-1, 1]")
        if not 0.0 <= self.overlap_fraction <= 1.0:
            raise RangeError(f"overlap_fraction={self.overlap_fraction} outside [0, 1]")
        object.__setattr__(self, "met3r", combine_scores(self.s_forward, self.s_backward))
        object.__setattr__(self, "variants", dict(self.variants))


@dataclass(frozen=True)
class PairRecord:
    """One evaluated window (i, j); ``score`` is None when the pair was excluded."""

    i: int
    j: int
    score: PairScore | None
    excluded_reason: str = ""

    @property
    def excluded(self) -> bool:
        return self.score is None


@dataclass
class SequenceReport:
    sequence_id: str
    pairs: list[PairRecord] = field(default_factory=list)

    @property
    def excluded(self) -> list[PairRecord]:
        return [p for p in self.pairs if p.excluded]

    def values(self, metric: str = "met3r") -> list[float | None]:
        """Per-pair value of ``metric`` (None for excluded pairs or missing variants)."""
        out = []
        for p in self.pairs:
            if p.score is None:
                out.append(None)
            elif metric == "met3r":
                out.append(p.score.met3r)
            else:
                v = p.score.variants.get(metric)
                out.append(None if v is None else float(v))
        return out
