"""Sequence evaluation: load frames, score sliding-window pairs, aggregate, write reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import cv2
import numpy as np
from PIL import Image

from . import container
from .backends import (
    CorrespondenceBackendConfig,
    FeatureBackendConfig,
    PointMapBackendConfig,
    SyntheticMatcher,
    SyntheticPointBackend,
    make_correspondence_backend,
    make_feature_backend,
    make_point_backend,
)
from .baselines import TsedThresholds, fundamental_from_pose, sed_pair, tsed_pair, tsed_sequence
from .core import (
    CameraIntrinsics,
    ConfigError,
    CorruptImage,
    EmptySequence,
    ImageFrame,
    Met3rError,
    PairRecord,
    Pose,
    SequenceReport,
    validate_frame,
)
from .metric import MetricOptions, evaluate_pair, score_map
from .synthetic import SyntheticSceneSpec

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}
POSES_FILE = "poses.txt"
SCENE_FILE = "scene.json"
RESIZE_POLICIES = ("direct", "aspect")
CSV_HEADER = [
    "sequence_id", "i", "j", "met3r", "s_forward", "s_backward", "overlap_fraction",
    "psnr", "ssim", "unmasked", "sed", "tsed", "excluded_reason",
]
FAILURE_BUDGET = 0.5
AGGREGATED = ("met3r", "psnr", "ssim", "unmasked_met3r", "sed")


class FailureBudgetExceeded(Met3rError):
    def __init__(self, message, reports=None, curves=None):
        super().__init__(message)
        self.reports, self.curves = reports, curves


class CorruptSidecar(CorruptImage):
    pass


class IoError(Met3rError):
    pass


@dataclass(frozen=True)
class EvalJob:
    data_root: str
    sequences: tuple[str, ...] | None = None
    stride: int = 1
    resolution: int = 256
    resize: str = "direct"
    point_backend: PointMapBackendConfig = field(default_factory=PointMapBackendConfig)
    feature_backend: FeatureBackendConfig = field(default_factory=FeatureBackendConfig)
    metric: MetricOptions = field(default_factory=MetricOptions)
    baselines: bool = False
    thresholds: TsedThresholds = field(default_factory=TsedThresholds)
    matcher: CorrespondenceBackendConfig = field(default_factory=CorrespondenceBackendConfig)
    out_dir: str | None = None
    workers: int = 1
    seed: int = 0
    score_maps: bool = False
    label: str | None = None
    extern_metrics: dict | None = None

    def __post_init__(self):
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if self.resolution < 16 or self.resolution % 16:
            raise ConfigError(f"resolution {self.resolution} must be a positive multiple of 16")
        if self.resize not in RESIZE_POLICIES:
            raise ConfigError(f"unknown resize policy {self.resize!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def method(self) -> str:
        return self.label or Path(self.data_root).name


@dataclass
class AggregateCurve:
    """Per-pair-index statistics across sequences for one metric."""

    metric: str
    mean: np.ndarray
    std: np.ndarray
    count: np.ndarray

    def to_dict(self) -> dict:
        return {
            "mean": [_json_num(v) for v in self.mean],
            "std": [_json_num(v) for v in self.std],
            "count": [int(c) for c in self.count],
        }


# ---------------------------------------------------------------- ingestion

def _read_image(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise CorruptImage(f"cannot decode {path}: {exc}") from exc


def read_poses(path, n_frames: int) -> list[tuple[Pose, CameraIntrinsics]]:
    """Parse a sidecar with one row per frame: 12 pose values (3x4 world-from-camera) then fx fy cx cy."""
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if len(rows) != n_frames:
        raise CorruptSidecar(f"{path}: {len(rows)} rows for {n_frames} frames")
    out = []
    for k, row in enumerate(rows):
        if len(row) != 16:
            raise CorruptSidecar(f"{path}: row {k} has {len(row)} values, expected 16")
        vals = [float(v) for v in row]
        out.append((Pose.from_matrix(vals[:12]), CameraIntrinsics(*vals[12:])))
    return out


def write_poses(path, frames: Sequence[ImageFrame]) -> None:
    lines = []
    for f in frames:
        K = f.intrinsics
        vals = list(f.pose.matrix().ravel()) + [K.fx, K.fy, K.cx, K.cy]
        lines.append(" ".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def load_sequence(directory) -> list[ImageFrame]:
    """Frames of one sequence, in lexicographic file order, with poses attached when available."""
    directory = Path(directory)
    if not directory.is_dir():
        raise EmptySequence(f"{directory} is not a directory")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise EmptySequence(f"no frames in {directory}")
    poses = None
    if (directory / POSES_FILE).exists():
        poses = read_poses(directory / POSES_FILE, len(files))
    frames = []
    for k, path in enumerate(files):
        pose, K = poses[k] if poses else (None, None)
        frames.append(validate_frame(ImageFrame(_read_image(path), frame_index=k, pose=pose,
                                                intrinsics=K, sequence_id=directory.name)))
    return frames


def write_sequence(directory, frames: Sequence[ImageFrame], scene: SyntheticSceneSpec | None = None) -> Path:
    """Write frames as PNGs plus the poses sidecar (and scene description for synthetic data)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for f in frames:
        Image.fromarray(np.round(f.pixels * 255).astype(np.uint8)).save(directory / f"{f.frame_index:05d}.png")
    if all(f.pose is not None and f.intrinsics is not None for f in frames):
        write_poses(directory / POSES_FILE, frames)
    if scene is not None:
        (directory / SCENE_FILE).write_text(json.dumps(scene.to_dict(), indent=2) + "\n")
    return directory


def aspect_size(width: int, height: int, target: int) -> tuple[int, int]:
    """Aspect-preserving size with pixel count closest to target**2, each side floored to a multiple of 16."""
    s = math.sqrt(target * target / (width * height))
    w = max(16, int(math.floor(width * s / 16 + 1e-9)) * 16)
    h = max(16, int(math.floor(height * s / 16 + 1e-9)) * 16)
    return w, h


def standardize_resolution(frame: ImageFrame, target: int = 256, policy: str = "direct") -> ImageFrame:
    if policy == "direct":
        w, h = target, target
    elif policy == "aspect":
        w, h = aspect_size(frame.width, frame.height, target)
    else:
        raise ConfigError(f"unknown resize policy {policy!r}")
    if (h, w) == frame.shape:
        return frame
    px = cv2.resize(np.ascontiguousarray(frame.pixels), (w, h), interpolation=cv2.INTER_LINEAR)
    K = frame.intrinsics.scaled(w / frame.width, h / frame.height) if frame.intrinsics else None
    return replace(frame, pixels=np.clip(px, 0.0, 1.0), intrinsics=K)


def sliding_pairs(frames: Sequence | int, stride: int = 1) -> list[tuple[int, int]]:
    n = frames if isinstance(frames, int) else len(frames)
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    if n < stride + 1:
        raise EmptySequence(f"{n} frames cannot form a pair at stride {stride}")
    return [(i, i + stride) for i in range(n - stride)]


def list_sequences(job: EvalJob) -> list[Path]:
    root = Path(job.data_root)
    if job.sequences:
        return [root / s for s in job.sequences]
    if not root.is_dir():
        raise ConfigError(f"data root {root} does not exist")
    if any(p.suffix.lower() in IMAGE_SUFFIXES for p in root.iterdir()):
        return [root]
    return sorted(p for p in root.iterdir() if p.is_dir())


def _load_scene(seq_dir: Path) -> SyntheticSceneSpec | None:
    path = seq_dir / SCENE_FILE
    if not path.exists():
        return None
    return SyntheticSceneSpec.from_dict(json.loads(path.read_text()))


# ---------------------------------------------------------------- evaluation

@dataclass(frozen=True)
class _Task:
    sequence_id: str
    i: int
    j: int
    frame_i: ImageFrame
    frame_j: ImageFrame
    scene: SyntheticSceneSpec | None


class _Worker:
    """Backends owned by one worker process; synthetic ones are rebuilt per scene."""

    def __init__(self, job: EvalJob):
        self.job = job
        pb = job.point_backend
        self.point = None if pb.kind == "synthetic-pinhole" else make_point_backend(pb)
        self.features = make_feature_backend(job.feature_backend)
        mb = job.matcher
        self.matcher = None if (not job.baselines or mb.kind == "synthetic") else make_correspondence_backend(mb)

    def __call__(self, task: _Task):
        job = self.job
        point = self.point or SyntheticPointBackend(job.point_backend.scene or task.scene)
        try:
            ev = evaluate_pair(task.frame_i, task.frame_j, point, self.features, job.metric)
        except Exception as exc:  # noqa: BLE001 - any backend failure excludes the pair
            reason = f"{type(exc).__name__}: {exc}".replace("\n", " ")
            return PairRecord(task.i, task.j, None, reason), None
        score = ev.score
        if job.baselines:
            score = replace(score, variants={**score.variants, **self._baselines(task)})
        smap = score_map(ev.forward.proj_a, ev.forward.proj_b, ev.forward.mask) if job.score_maps else None
        return PairRecord(task.i, task.j, score), smap

    def _baselines(self, task: _Task) -> dict:
        Ii, Ij = task.frame_i, task.frame_j
        if None in (Ii.pose, Ij.pose, Ii.intrinsics, Ij.intrinsics):
            return {"sed": None, "tsed_consistent": None}
        matcher = self.matcher
        if matcher is None:
            mb = self.job.matcher
            matcher = SyntheticMatcher(mb.scene or task.scene, mb.n_samples, mb.seed)
        try:
            setup = fundamental_from_pose(Ii.pose, Ij.pose, Ii.intrinsics, Ij.intrinsics)
            matches = matcher.match(Ii, Ij)
        except Met3rError as exc:
            logger.info("%s (%d, %d): baselines not evaluable: %s", task.sequence_id, task.i, task.j, exc)
            return {"sed": None, "tsed_consistent": None}
        sed = sed_pair(matches, setup) if len(matches) else None
        return {"sed": sed, "tsed_consistent": tsed_pair(matches, setup, self.job.thresholds)}


_WORKER: _Worker | None = None


def _init_worker(job: EvalJob) -> None:
    global _WORKER
    _WORKER = _Worker(job)


def _run_task(task: _Task):
    return _WORKER(task)


def _tasks(job: EvalJob) -> tuple[list[str], list[_Task]]:
    seq_ids, tasks = [], []
    for seq_dir in list_sequences(job):
        frames = [standardize_resolution(f, job.resolution, job.resize) for f in load_sequence(seq_dir)]
        scene = _load_scene(seq_dir)
        seq_ids.append(seq_dir.name)
        for i, j in sliding_pairs(frames, job.stride):
            tasks.append(_Task(seq_dir.name, i, j, frames[i], frames[j], scene))
    return seq_ids, tasks


def evaluate_tasks(job: EvalJob, tasks: list[_Task]) -> list:
    if job.workers == 1:
        worker = _Worker(job)
        return [worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=job.workers, initializer=_init_worker, initargs=(job,)) as pool:
        return list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * job.workers))))


def aggregate(reports: Sequence[SequenceReport], metric: str = "met3r") -> AggregateCurve:
    """Per-index mean and population std over sequences, skipping excluded pairs."""
    per_seq = [r.values(metric) for r in reports]
    n = max((len(v) for v in per_seq), default=0)
    mean, std, count = np.full(n, np.nan), np.full(n, np.nan), np.zeros(n, dtype=np.int64)
    for k in range(n):
        vals = np.array([v[k] for v in per_seq if k < len(v) and v[k] is not None], dtype=np.float64)
        vals = vals[np.isfinite(vals)]
        count[k] = vals.size
        if vals.size:
            mean[k] = vals.mean()
            std[k] = vals.std()
    return AggregateCurve(metric, mean, std, count)


def run_job(job: EvalJob) -> tuple[list[SequenceReport], dict[str, AggregateCurve]]:
    """Evaluate every sliding-window pair of every sequence.

    Outputs are written when ``job.out_dir`` is set. Raises
    FailureBudgetExceeded (after writing) when more than half the pairs fail.
    """
    seq_ids, tasks = _tasks(job)
    results = evaluate_tasks(job, tasks)
    reports = {s: SequenceReport(s) for s in seq_ids}
    maps = {}
    for task, (record, smap) in zip(tasks, results):
        reports[task.sequence_id].pairs.append(record)
        if smap is not None:
            maps[(task.sequence_id, task.i, task.j)] = smap
    reports = [reports[s] for s in seq_ids]
    curves = {m: aggregate(reports, m) for m in AGGREGATED}
    curves = {m: c for m, c in curves.items() if m == "met3r" or c.count.any()}
    if job.out_dir:
        emit_outputs(reports, curves, job, maps)
    n_fail = sum(len(r.excluded) for r in reports)
    if tasks and n_fail > FAILURE_BUDGET * len(tasks):
        raise FailureBudgetExceeded(f"{n_fail} of {len(tasks)} pairs failed", reports, curves)
    return reports, curves


# ---------------------------------------------------------------- outputs

def _json_num(v):
    if v is None:
        return None
    v = float(v)
    if math.isnan(v):
        return None
    if math.isinf(v):
        return "exact" if v > 0 else "-inf"
    return v


def _csv_num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    v = float(v)
    if math.isnan(v):
        return ""
    if math.isinf(v):
        return "exact" if v > 0 else "-inf"
    return repr(v)


def pairs_csv(reports: Iterable[SequenceReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in reports:
        for p in r.pairs:
            s = p.score
            if s is None:
                w.writerow([r.sequence_id, p.i, p.j] + [""] * 9 + [p.excluded_reason])
                continue
            v = s.variants
            w.writerow([
                r.sequence_id, p.i, p.j, _csv_num(s.met3r), _csv_num(s.s_forward), _csv_num(s.s_backward),
                _csv_num(s.overlap_fraction), _csv_num(v.get("psnr")), _csv_num(v.get("ssim")),
                _csv_num(v.get("unmasked_met3r")), _csv_num(v.get("sed")), _csv_num(v.get("tsed_consistent")), "",
            ])
    return buf.getvalue()


def _mean_of(values) -> float | None:
    vals = [float(v) for v in values if v is not None]
    if not vals:
        return None
    if any(math.isinf(v) for v in vals):
        return math.inf
    return float(np.mean(vals))


def summary(reports: Sequence[SequenceReport], curves: dict[str, AggregateCurve], job: EvalJob) -> dict:
    all_vals = lambda m: [v for r in reports for v in r.values(m)]  # noqa: E731
    tsed_flags = [p.score.variants.get("tsed_consistent") for r in reports for p in r.pairs if p.score]
    extern = job.extern_metrics or {}
    metrics = {
        "met3r": _json_num(_mean_of(all_vals("met3r"))),
        "tsed": _json_num(tsed_sequence(tsed_flags)) if job.baselines else None,
        "sed": _json_num(_mean_of(all_vals("sed"))) if job.baselines else None,
        "fvd": extern.get("fvd"),
        "fid": extern.get("fid"),
        "kid": extern.get("kid"),
        "psnr": _json_num(_mean_of(all_vals("psnr"))),
        "ssim": _json_num(_mean_of(all_vals("ssim"))),
        "unmasked_met3r": _json_num(_mean_of(all_vals("unmasked_met3r"))),
    }
    return {
        "method": job.method,
        "config": {
            "resolution": job.resolution,
            "resize": job.resize,
            "stride": job.stride,
            "point_backend": job.point_backend.kind,
            "feature_backend": job.feature_backend.kind,
            "variant": job.metric.variant,
            "one_directional": job.metric.one_directional,
            "masked": job.metric.masked,
            "baselines": job.baselines,
            "seed": job.seed,
        },
        "n_sequences": len(reports),
        "n_pairs": sum(len(r.pairs) for r in reports),
        "n_excluded": sum(len(r.excluded) for r in reports),
        "metrics": metrics,
        "curves": {m: c.to_dict() for m, c in curves.items()},
        "sequences": {
            r.sequence_id: {
                "met3r": _json_num(_mean_of(r.values("met3r"))),
                "excluded": [[p.i, p.j, p.excluded_reason] for p in r.excluded],
            }
            for r in reports
        },
    }


COLORMAP = "magma"


def heatmap_rgba(smap: np.ndarray, vmax: float = 1.0) -> np.ndarray:
    """8-bit RGBA heatmap: values in [0, vmax] through magma, NaN fully transparent."""
    from matplotlib import colormaps

    norm = np.clip(np.nan_to_num(smap, nan=0.0) / vmax, 0.0, 1.0)
    rgba = (colormaps[COLORMAP](norm) * 255).round().astype(np.uint8)
    rgba[np.isnan(smap), 3] = 0
    return rgba


def plot_curves(curves: dict[str, AggregateCurve], path, title: str = "") -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for metric, c in curves.items():
        fig, ax = plt.subplots(figsize=(6, 3.5))
        x = np.arange(len(c.mean))
        ax.plot(x, c.mean, lw=1.5)
        ax.fill_between(x, c.mean - c.std, c.mean + c.std, alpha=0.25)
        ax.set_xlabel("image pair index")
        ax.set_ylabel(metric)
        ax.set_title(title)
        fig.tight_layout()
        fig.savefig(Path(path) / f"curve_{metric}.png", dpi=100, metadata={"Software": None})
        plt.close(fig)


def emit_outputs(reports: Sequence[SequenceReport], curves: dict[str, AggregateCurve], job: EvalJob,
                 score_maps: dict | None = None) -> Path:
    out = Path(job.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "pairs.csv").write_text(pairs_csv(reports))
        (out / "summary.json").write_text(json.dumps(summary(reports, curves, job), indent=2, sort_keys=True) + "\n")
        plot_curves(curves, out, job.method)
        for (seq, i, j), smap in sorted((score_maps or {}).items()):
            d = out / "score_maps" / seq
            d.mkdir(parents=True, exist_ok=True)
            container.write(d / f"{i}_{j}.m3t", {"scoremap": smap.astype(np.float32)})
            Image.fromarray(heatmap_rgba(smap), mode="RGBA").save(d / f"{i}_{j}.png")
    except OSError as exc:
        raise IoError(f"cannot write outputs to {out}: {exc}") from exc
    return out


def compare_runs(summaries: Sequence, out_path, metric: str = "met3r") -> None:
    """Overlay the per-index curves of several runs' summary.json files."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    for path in summaries:
        data = json.loads(Path(path).read_text())
        c = data["curves"].get(metric)
        if c is None:
            continue
        mean = np.array([np.nan if v is None else v for v in c["mean"]], dtype=float)
        std = np.array([np.nan if v is None else v for v in c["std"]], dtype=float)
        x = np.arange(len(mean))
        ax.plot(x, mean, lw=1.5, label=data.get("method", Path(path).stem))
        ax.fill_between(x, mean - std, mean + std, alpha=0.2)
    ax.set_xlabel("image pair index")
    ax.set_ylabel(metric)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=100, metadata={"Software": None})
    plt.close(fig)
