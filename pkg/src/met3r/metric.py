"""Masked feature similarity between two views projected into a common camera."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage.metrics import structural_similarity

from .backends import (
    FeatureBackendConfig,
    PointMapBackendConfig,
    make_feature_backend,
    make_point_backend,
)
from .core import (
    ConfigError,
    EmptyOverlap,
    FeatureGrid,
    ImageFrame,
    PairScore,
    PointMapPair,
    ProjectionResult,
    ShapeMismatch,
)
from .geometry import (
    RasterizerSettings,
    build_projection,
    canonical_point_map,
    estimate_focal,
    overlap_mask,
    pixel_grid,
    rasterize_points,
)

logger = logging.getLogger(__name__)

VARIANTS = ("feature-cosine", "rgb-psnr", "rgb-ssim")
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


@dataclass(frozen=True)
class MetricOptions:
    """Scoring options.

    ``variant`` selects an extra RGB comparison (psnr or ssim) that is stored
    next to the cosine score. ``masked=False`` additionally records the score
    averaged over all pixels instead of the overlap mask.
    """

    one_directional: bool = False
    variant: str = "feature-cosine"
    masked: bool = True
    raster: RasterizerSettings = field(default_factory=RasterizerSettings)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")


def _check(F1hat: ProjectionResult, F2hat: ProjectionResult, M: np.ndarray | None = None) -> None:
    if F1hat.attributes.shape != F2hat.attributes.shape:
        raise ShapeMismatch(f"projections differ: {F1hat.attributes.shape} vs {F2hat.attributes.shape}")
    if M is not None and M.shape != F1hat.shape:
        raise ShapeMismatch(f"mask {M.shape} does not match projections {F1hat.shape}")


def cosine_map(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel cosine of two HxWxD grids and the mask of pixels where both norms are nonzero.

    The cosine is set to 0 where it is undefined.
    """
    na = np.sqrt(np.einsum("hwd,hwd->hw", a, a))
    nb = np.sqrt(np.einsum("hwd,hwd->hw", b, b))
    dot = np.einsum("hwd,hwd->hw", a, b)
    defined = (na > 0) & (nb > 0)
    cos = np.zeros(dot.shape)
    np.divide(dot, na * nb, out=cos, where=defined)
    return np.clip(cos, -1.0, 1.0), defined


def effective_mask(F1hat: ProjectionResult, F2hat: ProjectionResult, M: np.ndarray) -> np.ndarray:
    """``M`` restricted to pixels rendered in both views with nonzero feature norms."""
    _, defined = cosine_map(F1hat.attributes, F2hat.attributes)
    return np.asarray(M, dtype=bool) & F1hat.mask & F2hat.mask & defined


def masked_similarity(F1hat: ProjectionResult, F2hat: ProjectionResult, M: np.ndarray) -> float:
    """Mean cosine similarity over the overlap mask.

    Raises:
        EmptyOverlap: no pixel remains after dropping zero-norm features.
    """
    _check(F1hat, F2hat, M)
    cos, _ = cosine_map(F1hat.attributes, F2hat.attributes)
    m = effective_mask(F1hat, F2hat, M)
    n = int(m.sum())
    if n == 0:
        raise EmptyOverlap("overlap mask is empty")
    return float(np.clip(cos[m].sum() / n, -1.0, 1.0))


def score_map(F1hat: ProjectionResult, F2hat: ProjectionResult, M: np.ndarray) -> np.ndarray:
    """Per-pixel ``1 - cos`` inside the mask, NaN elsewhere."""
    _check(F1hat, F2hat, M)
    cos, _ = cosine_map(F1hat.attributes, F2hat.attributes)
    m = effective_mask(F1hat, F2hat, M)
    return np.where(m, 1.0 - cos, np.nan)


def unmasked_similarity(F1hat: ProjectionResult, F2hat: ProjectionResult) -> float:
    """Mean cosine over every pixel, background sentinel values included as rendered."""
    _check(F1hat, F2hat)
    cos, _ = cosine_map(F1hat.attributes, F2hat.attributes)
    return float(np.clip(cos.mean(), -1.0, 1.0))


def psnr_masked(a: np.ndarray, b: np.ndarray, M: np.ndarray) -> float:
    """PSNR with peak 1.0 over masked pixels; ``inf`` for identical inputs."""
    M = np.asarray(M, dtype=bool)
    if not M.any():
        raise EmptyOverlap("overlap mask is empty")
    mse = float(np.mean((a[M] - b[M]) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim_masked(a: np.ndarray, b: np.ndarray, M: np.ndarray) -> float:
    """Gaussian-window SSIM averaged over pixels whose whole 11x11 window is inside ``M``."""
    M = np.asarray(M, dtype=bool)
    inner = ndimage.binary_erosion(M, structure=np.ones((SSIM_WINDOW, SSIM_WINDOW), bool), border_value=0)
    if not inner.any():
        raise EmptyOverlap("no pixel has its full SSIM window inside the overlap mask")
    a0 = np.where(M[..., None], a, 0.0)
    b0 = np.where(M[..., None], b, 0.0)
    _, smap = structural_similarity(
        a0, b0, data_range=1.0, channel_axis=-1, gaussian_weights=True, sigma=SSIM_SIGMA,
        use_sample_covariance=False, K1=SSIM_K1, K2=SSIM_K2, full=True,
    )
    return float(smap.mean(axis=-1)[inner].mean())


def rgb_variant_score(P1hat: ProjectionResult, P2hat: ProjectionResult, M: np.ndarray, mode: str) -> float:
    _check(P1hat, P2hat, M)
    if P1hat.attributes.shape[-1] != 3:
        raise ShapeMismatch("RGB variants need 3-channel projections")
    m = np.asarray(M, dtype=bool) & P1hat.mask & P2hat.mask
    if mode == "psnr":
        return psnr_masked(P1hat.attributes, P2hat.attributes, m)
    if mode == "ssim":
        return ssim_masked(P1hat.attributes, P2hat.attributes, m)
    raise ConfigError(f"unknown RGB mode {mode!r}")


@dataclass(frozen=True)
class DirectionResult:
    """Everything computed for one direction S(I_a, I_b)."""

    similarity: float
    overlap_fraction: float
    proj_a: ProjectionResult
    proj_b: ProjectionResult
    mask: np.ndarray
    focal: tuple[float, float]
    extras: dict


def project_pair(pair: PointMapPair, F1: FeatureGrid | np.ndarray, F2: FeatureGrid | np.ndarray,
                 settings: RasterizerSettings = RasterizerSettings()):
    """Render both views' attributes into the reference camera with an estimated focal length."""
    H, W = pair.shape
    fx, fy = estimate_focal(canonical_point_map(pair), pixel_grid(W, H))
    K = build_projection(fx, fy, width=W, height=H)
    r1 = rasterize_points(pair.X1, F1, K, settings)
    r2 = rasterize_points(pair.X2, F2, K, settings)
    return r1, r2, K


def evaluate_direction(Ia: ImageFrame, Ib: ImageFrame, point_backend, feature_backend,
                       opts: MetricOptions) -> DirectionResult:
    pair = point_backend.infer(Ia, Ib)
    Fa, Fb = feature_backend.extract(Ia), feature_backend.extract(Ib)
    ra, rb, K = project_pair(pair, Fa, Fb, opts.raster)
    M = overlap_mask(ra, rb)
    s = masked_similarity(ra, rb, M)
    eff = effective_mask(ra, rb, M)
    extras = {}
    if not opts.masked:
        extras["unmasked"] = unmasked_similarity(ra, rb)
    if opts.variant != "feature-cosine":
        Pa = rasterize_points(pair.X1, Ia.pixels, K, opts.raster)
        Pb = rasterize_points(pair.X2, Ib.pixels, K, opts.raster)
        mode = opts.variant.split("-", 1)[1]
        extras[mode] = rgb_variant_score(Pa, Pb, overlap_mask(Pa, Pb), mode)
    return DirectionResult(
        similarity=s,
        overlap_fraction=float(eff.sum()) / eff.size,
        proj_a=ra,
        proj_b=rb,
        mask=eff,
        focal=(K.fx, K.fy),
        extras=extras,
    )


@dataclass(frozen=True)
class PairEvaluation:
    score: PairScore
    forward: DirectionResult
    backward: DirectionResult | None


def _mean(a: float, b: float | None) -> float:
    return a if b is None else 0.5 * (a + b)


def evaluate_pair(I1: ImageFrame, I2: ImageFrame, point_backend, feature_backend,
                  opts: MetricOptions = MetricOptions()) -> PairEvaluation:
    """Score a pair with already-constructed backends.

    The backward direction re-runs the point backend with the inputs swapped,
    so its maps live in the camera of ``I2``.
    """
    if I1.shape != I2.shape:
        raise ShapeMismatch(f"frames differ in resolution: {I1.shape} vs {I2.shape}")
    fwd = evaluate_direction(I1, I2, point_backend, feature_backend, opts)
    bwd = None if opts.one_directional else evaluate_direction(I2, I1, point_backend, feature_backend, opts)
    variants: dict = {}
    for key in ("psnr", "ssim"):
        if key in fwd.extras:
            variants[key] = _mean(fwd.extras[key], bwd.extras[key] if bwd else None)
    if "unmasked" in fwd.extras:
        u_b = bwd.extras["unmasked"] if bwd else None
        variants["unmasked_met3r"] = 1.0 - _mean(fwd.extras["unmasked"], u_b)
    score = PairScore(
        s_forward=fwd.similarity,
        s_backward=None if bwd is None else bwd.similarity,
        overlap_fraction=fwd.overlap_fraction,
        variants=variants,
    )
    if bwd is not None:
        logger.debug("pair (%d, %d): one-directional gap %.3g", I1.frame_index, I2.frame_index,
                     abs(score.met3r - (1.0 - fwd.similarity)))
    return PairEvaluation(score, fwd, bwd)


def met3r_pair(I1: ImageFrame, I2: ImageFrame, point_cfg: PointMapBackendConfig,
               feat_cfg: FeatureBackendConfig, opts: MetricOptions = MetricOptions()) -> PairScore:
    """Consistency score of two frames; 0 means perfectly consistent, 2 is the maximum."""
    return evaluate_pair(I1, I2, make_point_backend(point_cfg), make_feature_backend(feat_cfg), opts).score
