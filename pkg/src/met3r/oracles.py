"""Slow reference implementations used to cross-check the vectorized code paths.

These are written as direct loops over points or pixels and share no code
with the implementations they check.
"""

from __future__ import annotations

import math

import numpy as np


def canonical_loop(X1, X2, C1, C2) -> np.ndarray:
    H, W, _ = X1.shape
    out = np.empty((H, W, 3))
    for r in range(H):
        for c in range(W):
            w1, w2 = max(C1[r, c], 1e-8), max(C2[r, c], 1e-8)
            for k in range(3):
                out[r, c, k] = (w1 * X1[r, c, k] + w2 * X2[r, c, k]) / (w1 + w2)
    return out


def rasterize_exhaustive(points, attrs, fx, fy, cx, cy, shape, radius=1.0, sentinel=-10000.0,
                         z_near=1e-6, tol=1e-6):
    """Visit every point in index order and test it against every pixel.

    Returns (winner_index, attributes, depth); a point replaces the current
    winner only with a strictly smaller depth.
    """
    H, W = shape
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    A = np.asarray(attrs, dtype=np.float64).reshape(P.shape[0], -1)
    rows, cols = np.mgrid[0:H, 0:W].astype(np.float64)
    zbuf = np.full((H, W), np.inf)
    win = np.full((H, W), -1, dtype=np.int64)
    lim = (radius - tol) ** 2
    for n in range(P.shape[0]):
        x, y, z = P[n]
        if not z > z_near:
            continue
        u = fx * x / z + cx
        v = fy * y / z + cy
        if not (math.isfinite(u) and math.isfinite(v)):
            continue
        cover = (cols - u) ** 2 + (rows - v) ** 2 < lim
        better = cover & (z < zbuf)
        zbuf[better] = z
        win[better] = n
    out = np.full((H, W, A.shape[1]), sentinel)
    hit = win >= 0
    out[hit] = A[win[hit]]
    return win, out, zbuf


def _cos(a, b):
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na == 0 or nb == 0:
        return None
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


def masked_similarity_loop(F1, F2, mask1, mask2, M):
    H, W, _ = F1.shape
    total, n = 0.0, 0
    for r in range(H):
        for c in range(W):
            if not (M[r, c] and mask1[r, c] and mask2[r, c]):
                continue
            cs = _cos(F1[r, c], F2[r, c])
            if cs is None:
                continue
            total += cs
            n += 1
    return None if n == 0 else total / n


def score_map_loop(F1, F2, mask1, mask2, M):
    H, W, _ = F1.shape
    out = np.full((H, W), np.nan)
    for r in range(H):
        for c in range(W):
            if M[r, c] and mask1[r, c] and mask2[r, c]:
                cs = _cos(F1[r, c], F2[r, c])
                if cs is not None:
                    out[r, c] = 1.0 - cs
    return out


def unmasked_similarity_loop(F1, F2):
    H, W, _ = F1.shape
    total = 0.0
    for r in range(H):
        for c in range(W):
            cs = _cos(F1[r, c], F2[r, c])
            total += 0.0 if cs is None else cs
    return total / (H * W)


def psnr_loop(a, b, M):
    H, W, D = a.shape
    se, n = 0.0, 0
    for r in range(H):
        for c in range(W):
            if M[r, c]:
                for k in range(D):
                    d = a[r, c, k] - b[r, c, k]
                    se += d * d
                    n += 1
    mse = se / n
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


def point_line_distance(pt, line) -> float:
    a, b, c = line
    return abs(a * pt[0] + b * pt[1] + c) / math.hypot(a, b)
