"""Contrast how met3r and SED respond to rendering the same scene at different resolutions.

SED is measured in pixels against a slightly wrong relative pose, so it grows
with image size. met3r compares features on the overlap and stays flat.

    python3 scripts/resolution_study.py --sizes 128 224 256 512
"""

import argparse

import numpy as np

from met3r.backends import (
    CorrespondenceBackendConfig,
    FeatureBackendConfig,
    PointMapBackendConfig,
    correspondence_backend_match,
)
from met3r.baselines import fundamental_from_pose, sed_pair
from met3r.core import Pose
from met3r.metric import met3r_pair
from met3r.synthetic import random_scene, render_pair, rotation_y


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[128, 224, 256, 512])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--eps", type=float, default=0.3)
    p.add_argument("--pose-error", type=float, default=0.01, help="yaw (rad) and y offset of the wrong pose")
    a = p.parse_args()

    print(f"{'size':>6} {'met3r':>10} {'sed_px':>10} {'sed/size':>10}")
    for size in a.sizes:
        m3, sed = [], []
        for seed in range(a.seeds):
            base = random_scene(seed, size=256, epsilon=a.eps)
            sc = base.at_resolution(size, size)
            I1, I2 = render_pair(sc)
            m3.append(met3r_pair(I1, I2, PointMapBackendConfig(scene=sc), FeatureBackendConfig()).met3r)
            wrong = Pose(rotation_y(a.pose_error) @ sc.pose2.R, sc.pose2.t + [0.0, a.pose_error, 0.0])
            matches = correspondence_backend_match(CorrespondenceBackendConfig(scene=sc, seed=seed), I1, I2)
            sed.append(sed_pair(matches, fundamental_from_pose(I1.pose, wrong, I1.intrinsics, I2.intrinsics)))
        print(f"{size:>6} {np.mean(m3):>10.5f} {np.mean(sed):>10.4f} {np.mean(sed) / size:>10.6f}")


if __name__ == "__main__":
    main()
