"""Pose-free projection of pixel-aligned point maps into the reference view."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    SENTINEL,
    CameraIntrinsics,
    DegenerateGeometry,
    FeatureGrid,
    PointMapPair,
    ProjectionResult,
    RangeError,
    ShapeMismatch,
)

MIN_VALID = 64
EPS_DIV = 1e-8
Z_NEAR = 1e-6
# Pixels whose center lies within this band of the splat boundary are not covered,
# so a point sitting on its own pixel center never leaks into its 4-neighbours.
BOUNDARY_TOL = 1e-6


@dataclass(frozen=True)
class PixelGrid:
    """Principal-point-centered pixel coordinates, ``U = col - cx``, ``V = row - cy``."""

    U: np.ndarray
    V: np.ndarray


def pixel_grid(width: int, height: int, cx: float | None = None, cy: float | None = None) -> PixelGrid:
    cx = (width - 1) / 2 if cx is None else cx
    cy = (height - 1) / 2 if cy is None else cy
    cols, rows = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    return PixelGrid(U=cols - cx, V=rows - cy)


@dataclass(frozen=True)
class CanonicalPointMap:
    Xc: np.ndarray

    @property
    def X(self) -> np.ndarray:
        return self.Xc[..., 0]

    @property
    def Y(self) -> np.ndarray:
        return self.Xc[..., 1]

    @property
    def Z(self) -> np.ndarray:
        return self.Xc[..., 2]


@dataclass(frozen=True)
class RasterizerSettings:
    splat_radius: float = 1.0
    points_per_pixel: int = 1
    sentinel: float = SENTINEL
    z_near: float = Z_NEAR

    def __post_init__(self):
        if not self.splat_radius > 0:
            raise RangeError("splat_radius must be positive")
        if self.points_per_pixel != 1:
            raise RangeError("only one point per pixel is supported")


def canonical_point_map(pair: PointMapPair) -> CanonicalPointMap:
    """Confidence-weighted average of the two point maps."""
    w1 = pair.C1[..., None]
    w2 = pair.C2[..., None]
    return CanonicalPointMap((w1 * pair.X1 + w2 * pair.X2) / (w1 + w2))


def lower_median(values: np.ndarray) -> float:
    """Median that returns the lower central element for even counts."""
    values = np.asarray(values, dtype=np.float64).ravel()
    k = (values.size - 1) // 2
    return float(np.partition(values, k)[k])


def estimate_focal(canon: CanonicalPointMap, grid: PixelGrid, min_valid: int = MIN_VALID) -> tuple[float, float]:
    """Per-axis focal lengths as the median of ``U*Z/X`` and ``V*Z/Y``.

    Pixels with ``|X| <= 1e-8`` (resp. ``|Y|``) or non-finite coordinates are left
    out of the corresponding median.

    Raises:
        DegenerateGeometry: fewer than ``min_valid`` usable pixels on an axis, or a
            non-positive median (e.g. views with no common content).
    """
    X, Y, Z = canon.X, canon.Y, canon.Z
    finite = np.isfinite(canon.Xc).all(axis=-1)
    out = []
    for axis, num, den in (("fx", grid.U, X), ("fy", grid.V, Y)):
        valid = finite & (np.abs(den) > EPS_DIV)
        n = int(valid.sum())
        if n < min_valid:
            raise DegenerateGeometry(f"{axis}: only {n} usable pixels (< {min_valid})")
        f = lower_median(num[valid] * Z[valid] / den[valid])
        if not (np.isfinite(f) and f > 0):
            raise DegenerateGeometry(f"{axis}: median focal {f} is not positive")
        out.append(f)
    return out[0], out[1]


def build_projection(
    fx: float,
    fy: float,
    cx: float | None = None,
    cy: float | None = None,
    width: int | None = None,
    height: int | None = None,
) -> CameraIntrinsics:
    """Intrinsics from focal lengths; principal point defaults to the image center."""
    if cx is None or cy is None:
        if width is None or height is None:
            raise RangeError("need cx, cy or the image size to place the principal point")
        cx = (width - 1) / 2 if cx is None else cx
        cy = (height - 1) / 2 if cy is None else cy
    K = CameraIntrinsics(float(fx), float(fy), float(cx), float(cy))
    if width is not None and height is not None:
        K.check_bounds(width, height)
    return K


def project(points: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Pixel coordinates (col, row) of camera-frame points, shape (..., 2)."""
    X, Y, Z = points[..., 0], points[..., 1], points[..., 2]
    return np.stack([K.fx * X / Z + K.cx, K.fy * Y / Z + K.cy], axis=-1)


def rasterize_points(
    points: np.ndarray,
    attributes: FeatureGrid | np.ndarray,
    K: CameraIntrinsics,
    settings: RasterizerSettings = RasterizerSettings(),
    out_shape: tuple[int, int] | None = None,
) -> ProjectionResult:
    """Z-buffered disk splatting of a point cloud with one attribute vector per point.

    A pixel is covered by a point when its center lies strictly inside the splat
    disk; among covering points the smallest depth wins, ties going to the lowest
    source index. Points with ``Z <= z_near`` are culled.
    """
    attrs = attributes.values if isinstance(attributes, FeatureGrid) else np.asarray(attributes, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    if attrs.shape[:-1] != points.shape[:-1]:
        raise ShapeMismatch(f"points {points.shape} and attributes {attrs.shape} not aligned")
    if out_shape is None:
        if points.ndim != 3:
            raise ShapeMismatch("out_shape is required for unstructured point lists")
        out_shape = points.shape[:2]
    H, W = out_shape
    D = attrs.shape[-1]
    P = points.reshape(-1, 3)
    A = attrs.reshape(-1, D)

    r = settings.splat_radius
    r2 = (r - BOUNDARY_TOL) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = project(P, K)
    keep = (P[:, 2] > settings.z_near) & np.isfinite(uv).all(axis=1)
    keep &= (uv[:, 0] > -r - 1) & (uv[:, 0] < W + r) & (uv[:, 1] > -r - 1) & (uv[:, 1] < H + r)
    idx = np.flatnonzero(keep)
    u, v, z = uv[idx, 0], uv[idx, 1], P[idx, 2]

    R = int(np.ceil(r))
    offs = np.arange(-R, R + 2)
    base_c = np.floor(u).astype(np.int64)
    base_r = np.floor(v).astype(np.int64)
    pix_l, dep_l, src_l = [], [], []
    for dr in offs:
        rows = base_r + dr
        for dc in offs:
            cols = base_c + dc
            d2 = (cols - u) ** 2 + (rows - v) ** 2
            hit = (d2 < r2) & (rows >= 0) & (rows < H) & (cols >= 0) & (cols < W)
            pix_l.append(rows[hit] * W + cols[hit])
            dep_l.append(z[hit])
            src_l.append(idx[hit])
    pix = np.concatenate(pix_l)
    dep = np.concatenate(dep_l)
    src = np.concatenate(src_l)

    order = np.lexsort((src, dep, pix))
    pix, src, dep = pix[order], src[order], dep[order]
    first = np.ones(pix.size, dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    win_pix, win_src, win_dep = pix[first], src[first], dep[first]

    out = np.full((H * W, D), settings.sentinel, dtype=np.float64)
    depth = np.full(H * W, np.inf)
    index = np.full(H * W, -1, dtype=np.int64)
    out[win_pix] = A[win_src]
    depth[win_pix] = win_dep
    index[win_pix] = win_src
    mask = index >= 0
    return ProjectionResult(
        attributes=out.reshape(H, W, D),
        depth=depth.reshape(H, W),
        mask=mask.reshape(H, W),
        sentinel=settings.sentinel,
        index=index.reshape(H, W),
    )


def sentinel_mask(result: ProjectionResult) -> np.ndarray:
    """Coverage recovered from the rendered values: false where every channel equals the sentinel."""
    return ~np.all(result.attributes == result.sentinel, axis=-1)


def overlap_mask(r1: ProjectionResult, r2: ProjectionResult) -> np.ndarray:
    if r1.shape != r2.shape:
        raise ShapeMismatch(f"projection shapes differ: {r1.shape} vs {r2.shape}")
    return r1.mask & r2.mask
