"""Oracle self-checks runnable without model weights (``met3r selftest``)."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .backends import RgbFeatures, SyntheticPointBackend
from .core import CameraIntrinsics, DegenerateGeometry, PairScore, PointMapPair
from .geometry import (
    CanonicalPointMap,
    RasterizerSettings,
    canonical_point_map,
    estimate_focal,
    pixel_grid,
    rasterize_points,
)
from .metric import MetricOptions, evaluate_pair
from .oracles import rasterize_exhaustive
from .synthetic import random_scene, render_frame, render_pair

EPSILONS = (0.0, 0.15, 0.3, 0.6)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


@dataclass
class PairLog:
    """Every pair scored during a selftest run, kept for the symmetry/range check."""

    entries: list = field(default_factory=list)

    def score(self, I1, I2, scene, opts=MetricOptions()) -> PairScore:
        s = evaluate_pair(I1, I2, SyntheticPointBackend(scene), RgbFeatures(), opts).score
        self.entries.append((I1, I2, scene, s))
        return s


def pinhole_points(f: float, size: int = 64, seed: int = 0, outlier_fraction: float = 0.0) -> np.ndarray:
    """Pixel-aligned points of an exact pinhole camera with random depths in [1, 5]."""
    rng = np.random.default_rng(seed)
    g = pixel_grid(size, size)
    Z = rng.uniform(1.0, 5.0, (size, size))
    pts = np.stack([g.U * Z / f, g.V * Z / f, Z], axis=-1)
    if outlier_fraction:
        n = int(round(outlier_fraction * size * size))
        idx = rng.permutation(size * size)[:n]
        flat = pts.reshape(-1, 3)
        flat[idx, 2] = rng.uniform(0.1, 50.0, n)
    return pts


def random_cloud(rng: np.random.Generator):
    """A random point cloud with duplicated depths and points behind the camera."""
    H, W = int(rng.integers(32, 65)), int(rng.integers(32, 65))
    P = int(rng.integers(1, 1025))
    f = rng.uniform(20, 80)
    K = CameraIntrinsics(f, f * rng.uniform(0.8, 1.2), rng.uniform(0, W - 1), rng.uniform(0, H - 1))
    Z = rng.choice(np.round(rng.uniform(-0.5, 6.0, 32), 1), size=P)
    u = rng.uniform(-3, W + 3, P)
    v = rng.uniform(-3, H + 3, P)
    pts = np.stack([(u - K.cx) * Z / K.fx, (v - K.cy) * Z / K.fy, Z], axis=-1)
    attrs = rng.standard_normal((P, int(rng.integers(1, 9))))
    radius = float(rng.choice([0.5, 1.0, 1.5]))
    return pts, attrs, K, (H, W), radius


def check_identity(log: PairLog, n: int = 20) -> CheckResult:
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(n):
        geometry = ("plane", "textured-height-field")[seed % 2]
        scene = random_scene(seed, size=48 + 16 * (seed % 3), geometry=geometry)
        I = render_frame(scene, scene.pose1, frame_index=0)
        worst = max(worst, abs(log.score(I, I, scene).met3r))
    dt = time.perf_counter() - t0
    return CheckResult("oracle identity", worst <= 1e-6 and dt < 5.0,
                       f"max |met3r(I,I)| = {worst:.3g} over {n} frames in {dt:.2f} s")


def check_rasterizer(n: int = 100, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n):
        pts, attrs, K, shape, radius = random_cloud(rng)
        res = rasterize_points(pts, attrs, K, RasterizerSettings(splat_radius=radius), out_shape=shape)
        win, out, _ = rasterize_exhaustive(pts, attrs, K.fx, K.fy, K.cx, K.cy, shape, radius=radius)
        if not (np.array_equal(res.index, win) and np.array_equal(res.attributes, out)):
            bad += 1
    return CheckResult("rasterizer equivalence", bad == 0, f"{n - bad}/{n} clouds bit-equal to exhaustive oracle")


def check_focal() -> CheckResult:
    errs = []
    g = pixel_grid(64, 64)
    for f in (50.0, 100.0, 300.0):
        for frac in (0.0, 0.1):
            pts = pinhole_points(f, 64, seed=int(f), outlier_fraction=frac)
            fx, fy = estimate_focal(canonical_point_map(PointMapPair(pts, pts, np.ones((64, 64)), np.ones((64, 64)))), g)
            errs.append(max(abs(fx - f), abs(fy - f)) / f)
    plane = pinhole_points(100.0, 64)
    plane[..., 0] = 0.0
    try:
        estimate_focal(CanonicalPointMap(plane), g)
        degenerate = False
    except DegenerateGeometry:
        degenerate = True
    ok = max(errs) <= 1e-6 and degenerate
    return CheckResult("focal recovery", ok,
                       f"max relative error {max(errs):.2g}; X=0 plane raises DegenerateGeometry: {degenerate}")


def check_monotonic(log: PairLog, seeds: int = 10, size: int = 64) -> CheckResult:
    means = []
    for eps in EPSILONS:
        vals = []
        for seed in range(seeds):
            scene = random_scene(seed, size=size, epsilon=eps)
            I1, I2 = render_pair(scene)
            vals.append(log.score(I1, I2, scene).met3r)
        means.append(float(np.mean(vals)))
    ok = all(a < b for a, b in zip(means, means[1:]))
    return CheckResult("monotonic in injected inconsistency", ok,
                       "mean met3r " + ", ".join(f"eps={e}: {m:.5f}" for e, m in zip(EPSILONS, means)))


def check_symmetry_range(log: PairLog) -> CheckResult:
    bad = []
    for I1, I2, scene, s in log.entries:
        rev = evaluate_pair(I2, I1, SyntheticPointBackend(scene), RgbFeatures()).score
        in_range = 0.0 <= s.met3r <= 2.0 and all(
            -1.0 <= v <= 1.0 for v in (s.s_forward, s.s_backward) if v is not None
        )
        rebuilt = 1.0 - 0.5 * (s.s_forward + s.s_backward)
        if not (in_range and rev.met3r == s.met3r and rebuilt == s.met3r):
            bad.append((I1.frame_index, I2.frame_index))
    return CheckResult("symmetry and range", not bad,
                       f"{len(log.entries) - len(bad)}/{len(log.entries)} pairs symmetric bit-for-bit and in range")


def run_selftest(print_fn=print) -> list[CheckResult]:
    log = PairLog()
    results = [
        check_identity(log),
        check_rasterizer(),
        check_focal(),
        check_monotonic(log),
        check_symmetry_range(log),
    ]
    for r in results:
        print_fn(r.line())
    return results

