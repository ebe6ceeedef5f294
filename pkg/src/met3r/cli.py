"""Command-line entry point: ``met3r eval | compare | selftest | synth``.

Exit codes: 0 success, 1 selftest failure, 2 failure budget exceeded,
3 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .backends import CorrespondenceBackendConfig, FeatureBackendConfig, PointMapBackendConfig
from .baselines import TsedThresholds
from .core import ConfigError, Met3rError
from .harness import EvalJob, FailureBudgetExceeded, compare_runs, run_job, write_sequence
from .metric import MetricOptions
from .synthetic import random_scene, render_sequence, trajectory

EXIT_OK, EXIT_SELFTEST, EXIT_BUDGET, EXIT_CONFIG = 0, 1, 2, 3

_POINT = {"synthetic": "synthetic-pinhole", "cache": "tensor-cache", "external": "external-process"}
_FEATURE = {"rgb": "rgb", "randproj": "seeded-random-projection", "cache": "tensor-cache", "external": "external-process"}
_MATCH = {"synthetic": "synthetic", "cache": "tensor-cache", "external": "external-process"}
_VARIANT = {"cosine": "feature-cosine", "psnr": "rgb-psnr", "ssim": "rgb-ssim"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="met3r", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("eval", help="score sliding-window pairs of image sequences")
    e.add_argument("--data", required=True, help="dataset root (one subdirectory per sequence) or one sequence dir")
    e.add_argument("--sequences", nargs="*", help="subset of sequence directory names")
    e.add_argument("--point-backend", choices=sorted(_POINT), default="synthetic")
    e.add_argument("--point-cache", help="cache directory for --point-backend cache")
    e.add_argument("--point-exe", help="command for --point-backend external")
    e.add_argument("--point-model", default="dust3r")
    e.add_argument("--feature-backend", choices=sorted(_FEATURE), default="rgb")
    e.add_argument("--feature-dim", type=int, default=16, help="channels for randproj")
    e.add_argument("--feature-cache")
    e.add_argument("--feature-exe")
    e.add_argument("--feature-model", default="dino_vits16+featup")
    e.add_argument("--no-upsample", action="store_true", help="reject features not at image resolution")
    e.add_argument("--resolution", type=int, default=256)
    e.add_argument("--resize", choices=["direct", "aspect"], default="direct")
    e.add_argument("--stride", type=int, default=1)
    e.add_argument("--one-directional", action="store_true")
    e.add_argument("--variant", choices=sorted(_VARIANT), default="cosine")
    e.add_argument("--unmasked", action="store_true", help="also record the score without the overlap mask")
    e.add_argument("--baselines", action="store_true", help="compute SED/TSED (needs poses)")
    e.add_argument("--matcher", choices=sorted(_MATCH), default="synthetic")
    e.add_argument("--matcher-cache")
    e.add_argument("--matcher-exe")
    e.add_argument("--matches", type=int, default=100, help="samples for the synthetic matcher")
    e.add_argument("--te", type=float, default=2.0)
    e.add_argument("--tm", type=int, default=10)
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.add_argument("--score-maps", action="store_true")
    e.add_argument("--label", help="method name written to summary.json")
    e.add_argument("--extern-metrics", help="JSON with externally computed fid/kid/fvd")

    c = sub.add_parser("compare", help="overlay per-pair curves of several runs")
    c.add_argument("--runs", nargs="+", required=True, help="summary.json files")
    c.add_argument("--out", required=True)
    c.add_argument("--metric", default="met3r")

    sub.add_parser("selftest", help="run the oracle self-checks")

    s = sub.add_parser("synth", help="write synthetic sequences for testing")
    s.add_argument("--out", required=True)
    s.add_argument("--sequences", type=int, default=3)
    s.add_argument("--frames", type=int, default=11)
    s.add_argument("--resolution", type=int, default=64)
    s.add_argument("--geometry", default="textured-height-field")
    s.add_argument("--eps-start", type=float, default=0.0)
    s.add_argument("--eps-end", type=float, default=0.0)
    s.add_argument("--step", type=float, default=0.05, help="camera translation per frame")
    s.add_argument("--seed", type=int, default=0)
    return p


def job_from_args(a) -> EvalJob:
    extern = None
    if a.extern_metrics:
        extern = json.loads(Path(a.extern_metrics).read_text())
    return EvalJob(
        data_root=a.data,
        sequences=tuple(a.sequences) if a.sequences else None,
        stride=a.stride,
        resolution=a.resolution,
        resize=a.resize,
        point_backend=PointMapBackendConfig(
            kind=_POINT[a.point_backend], executable=a.point_exe, model_id=a.point_model, cache_dir=a.point_cache,
        ),
        feature_backend=FeatureBackendConfig(
            kind=_FEATURE[a.feature_backend], D=a.feature_dim, upsample=not a.no_upsample, seed=a.seed,
            executable=a.feature_exe, model_id=a.feature_model, cache_dir=a.feature_cache,
        ),
        metric=MetricOptions(one_directional=a.one_directional, variant=_VARIANT[a.variant], masked=not a.unmasked),
        baselines=a.baselines,
        thresholds=TsedThresholds(Te=a.te, Tm=a.tm),
        matcher=CorrespondenceBackendConfig(
            kind=_MATCH[a.matcher], n_samples=a.matches, seed=a.seed, executable=a.matcher_exe,
            cache_dir=a.matcher_cache,
        ),
        out_dir=a.out,
        workers=a.workers,
        seed=a.seed,
        score_maps=a.score_maps,
        label=a.label,
        extern_metrics=extern,
    )


def synth(a) -> None:
    root = Path(a.out)
    eps = np.linspace(a.eps_start, a.eps_end, a.frames)
    for k in range(a.sequences):
        scene = random_scene(a.seed + k, size=a.resolution, geometry=a.geometry)
        seq_id = f"seq{k:03d}"
        frames = render_sequence(scene, trajectory(a.frames, step=a.step), eps, sequence_id=seq_id)
        write_sequence(root / seq_id, frames, scene)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "selftest":
            from .selftest import run_selftest

            return EXIT_OK if all(r.passed for r in run_selftest()) else EXIT_SELFTEST
        if args.command == "compare":
            compare_runs(args.runs, args.out, args.metric)
            return EXIT_OK
        if args.command == "synth":
            synth(args)
            return EXIT_OK
        job = job_from_args(args)
        reports, curves = run_job(job)
        n = sum(len(r.pairs) for r in reports)
        bad = sum(len(r.excluded) for r in reports)
        print(f"{job.method}: {n} pairs ({bad} excluded), mean met3r per index written to {job.out_dir}")
        return EXIT_OK
    except FailureBudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ConfigError, json.JSONDecodeError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Met3rError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
