import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from met3r import cli
from met3r.backends import PointMapBackendConfig
from met3r.core import (
    CameraIntrinsics,
    ConfigError,
    CorruptImage,
    EmptySequence,
    ImageFrame,
    PairRecord,
    PairScore,
    SequenceReport,
)
from met3r.harness import (
    CSV_HEADER,
    CorruptSidecar,
    EvalJob,
    FailureBudgetExceeded,
    aggregate,
    aspect_size,
    heatmap_rgba,
    load_sequence,
    read_poses,
    run_job,
    sliding_pairs,
    standardize_resolution,
    write_sequence,
)
from met3r.synthetic import random_scene, render_sequence, trajectory


def make_dataset(root, n_seq=3, n_frames=11, size=64, eps=0.0):
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (n_frames,))
    for k in range(n_seq):
        scene = random_scene(k, size=size)
        frames = render_sequence(scene, trajectory(n_frames, step=0.05), eps, sequence_id=f"seq{k}")
        write_sequence(root / f"seq{k}", frames, scene)
    return root


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    return make_dataset(tmp_path_factory.mktemp("data"))


def _frame(h, w, value=0.5):
    return ImageFrame(np.full((h, w, 3), value), intrinsics=CameraIntrinsics(w, w, (w - 1) / 2, (h - 1) / 2))


# ---------------------------------------------------------------- ingestion


def test_load_sequence_frames_in_order(tmp_path):
    for k in range(81):
        Image.fromarray(np.full((16, 16, 3), k, dtype=np.uint8)).save(tmp_path / f"{k:03d}.png")
    frames = load_sequence(tmp_path)
    assert len(frames) == 81
    assert [f.frame_index for f in frames] == list(range(81))
    assert frames[80].pixels[0, 0, 0] == pytest.approx(80 / 255)
    assert all(f.pose is None for f in frames)
    assert len(sliding_pairs(frames)) == 80


def test_empty_directory(tmp_path):
    with pytest.raises(EmptySequence):
        load_sequence(tmp_path)


def test_poses_round_trip(dataset):
    frames = load_sequence(dataset / "seq0")
    assert len(frames) == 11
    assert frames[3].pose.t == pytest.approx([0.15, 0.0, 0.0])
    assert frames[3].intrinsics.fx > 0
    assert frames[0].sequence_id == "seq0"


def test_corrupt_image(tmp_path):
    (tmp_path / "000.png").write_bytes(b"not a png")
    with pytest.raises(CorruptImage):
        load_sequence(tmp_path)


def test_sidecar_row_count(tmp_path):
    (tmp_path / "poses.txt").write_text("1 0 0 0 0 1 0 0 0 0 1 0 10 10 5 5\n")
    with pytest.raises(CorruptSidecar):
        read_poses(tmp_path / "poses.txt", 2)


# ---------------------------------------------------------------- resolution


def test_downscale_keeps_constant_image():
    f = standardize_resolution(_frame(512, 512, 0.3), 256)
    assert f.shape == (256, 256)
    np.testing.assert_allclose(f.pixels, 0.3, atol=1e-12)
    assert f.intrinsics.cx == pytest.approx(127.5)
    assert f.intrinsics.fx == pytest.approx(256.0)


def test_target_size_is_passthrough():
    f = _frame(256, 256)
    assert standardize_resolution(f, 256) is f


def _best_aspect(w, h, target):
    best = None
    for s in np.linspace(0.01, 2.0, 200_000):
        cand = (int(w * s) // 16 * 16, int(h * s) // 16 * 16)
        if min(cand) < 16 or cand[0] * cand[1] > target * target:
            continue
        if best is None or cand[0] * cand[1] > best[0] * best[1]:
            best = cand
    return best


def test_aspect_policy():
    assert aspect_size(1280, 720, 256) == (336, 192)
    assert aspect_size(1280, 720, 256) == _best_aspect(1280, 720, 256)
    f = standardize_resolution(_frame(720, 1280), 256, policy="aspect")
    assert f.shape == (192, 336)
    with pytest.raises(ConfigError):
        standardize_resolution(_frame(32, 32), 16, policy="crop")


@pytest.mark.parametrize("n, expected", [(81, 80), (2, 1), (48, 47)])
def test_sliding_pairs(n, expected):
    pairs = sliding_pairs(n)
    assert len(pairs) == expected and pairs[0] == (0, 1) and pairs[-1] == (n - 2, n - 1)


def test_sliding_pairs_needs_two_frames():
    with pytest.raises(EmptySequence):
        sliding_pairs(1)


# ---------------------------------------------------------------- aggregation


def _report(name, values):
    pairs = []
    for k, v in enumerate(values):
        if v is None:
            pairs.append(PairRecord(k, k + 1, None, "failed"))
        else:
            s = 1.0 - v
            pairs.append(PairRecord(k, k + 1, PairScore(s, s, 1.0)))
    return SequenceReport(name, pairs)


def test_single_sequence_has_zero_std():
    c = aggregate([_report("a", [0.1, 0.2, 0.3])])
    np.testing.assert_allclose(c.mean, [0.1, 0.2, 0.3], atol=1e-12)
    np.testing.assert_array_equal(c.std, 0.0)


def test_population_std():
    c = aggregate([_report("a", [0.1] * 4), _report("b", [0.3] * 4)])
    np.testing.assert_allclose(c.mean, 0.2, atol=1e-12)
    np.testing.assert_allclose(c.std, 0.1, atol=1e-12)


def test_excluded_pairs_are_skipped():
    c = aggregate([_report("a", [0.1, None]), _report("b", [0.3, 0.5])])
    np.testing.assert_allclose(c.mean, [0.2, 0.5], atol=1e-12)
    np.testing.assert_array_equal(c.count, [2, 1])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 8), st.integers(0, 10_000))
def test_aggregate_matches_loop(n_seq, n_pairs, seed):
    rng = np.random.default_rng(seed)
    vals = rng.uniform(0, 1, (n_seq, n_pairs))
    c = aggregate([_report(str(k), list(v)) for k, v in enumerate(vals)])
    for k in range(n_pairs):
        col = [vals[s][k] for s in range(n_seq)]
        m = sum(col) / n_seq
        sd = (sum((x - m) ** 2 for x in col) / n_seq) ** 0.5
        assert c.mean[k] == pytest.approx(m, abs=1e-9)
        assert c.std[k] == pytest.approx(sd, abs=1e-9)


# ---------------------------------------------------------------- end to end


def test_consistent_sequences_score_near_zero(dataset):
    reports, curves = run_job(EvalJob(str(dataset), resolution=64))
    assert len(reports) == 3 and all(len(r.pairs) == 10 for r in reports)
    assert np.all(curves["met3r"].mean < 0.01)
    assert np.all(curves["met3r"].count == 3)


def test_ramped_inconsistency_gives_rising_curve(tmp_path):
    make_dataset(tmp_path, n_seq=2, n_frames=6, eps=np.linspace(0.0, 0.75, 6))
    _, curves = run_job(EvalJob(str(tmp_path), resolution=64))
    assert np.all(np.diff(curves["met3r"].mean) > 0)


def test_outputs_are_written(dataset, tmp_path):
    out = tmp_path / "out"
    run_job(EvalJob(str(dataset), resolution=64, out_dir=str(out), score_maps=True))
    rows = list(csv.reader(io.StringIO((out / "pairs.csv").read_text())))
    assert rows[0] == CSV_HEADER
    assert len(rows) == 31
    assert all(r[CSV_HEADER.index("sed")] == "" for r in rows[1:])
    data = json.loads((out / "summary.json").read_text())
    assert data["n_pairs"] == 30 and data["metrics"]["tsed"] is None
    assert len(data["curves"]["met3r"]["mean"]) == 10
    assert (out / "curve_met3r.png").exists()
    assert (out / "score_maps" / "seq1" / "3_4.m3t").exists()
    png = np.asarray(Image.open(out / "score_maps" / "seq1" / "3_4.png"))
    assert png.shape == (64, 64, 4)


def test_rerun_is_byte_identical(dataset, tmp_path):
    for name in ("a", "b"):
        run_job(EvalJob(str(dataset), resolution=64, out_dir=str(tmp_path / name), baselines=True))
    for f in ("pairs.csv", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_baselines_on_synthetic_poses(dataset):
    reports, curves = run_job(EvalJob(str(dataset), resolution=64, baselines=True))
    seds = [v for r in reports for v in r.values("sed")]
    # frames are quantized to 8 bits but poses and matches are exact
    assert max(seds) < 1e-6
    assert "sed" in curves


def test_failure_budget(dataset, tmp_path):
    job = EvalJob(str(dataset), resolution=64, out_dir=str(tmp_path / "out"),
                  point_backend=PointMapBackendConfig(kind="tensor-cache", cache_dir=str(tmp_path / "empty")))
    with pytest.raises(FailureBudgetExceeded) as info:
        run_job(job)
    assert all(len(r.excluded) == 10 for r in info.value.reports)
    data = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert data["n_excluded"] == 30
    assert "CacheMiss" in data["sequences"]["seq0"]["excluded"][0][2]


def test_invalid_job_config():
    with pytest.raises(ConfigError):
        EvalJob("x", resolution=100)
    with pytest.raises(ConfigError):
        EvalJob("x", stride=0)


def test_heatmap_transparency():
    rgba = heatmap_rgba(np.array([[np.nan, 0.0], [0.5, 1.0]]))
    assert rgba[0, 0, 3] == 0 and np.all(rgba[1:, :, 3] == 255) and rgba[0, 1, 3] == 255


# ---------------------------------------------------------------- CLI


def test_cli_eval_and_compare(dataset, tmp_path, capsys):
    assert cli.main(["eval", "--data", str(dataset), "--resolution", "64", "--out", str(tmp_path / "r1")]) == 0
    assert cli.main(["eval", "--data", str(dataset), "--resolution", "64", "--feature-backend", "randproj",
                     "--out", str(tmp_path / "r2"), "--label", "randproj"]) == 0
    assert "30 pairs" in capsys.readouterr().out
    out = tmp_path / "cmp.png"
    assert cli.main(["compare", "--runs", str(tmp_path / "r1" / "summary.json"),
                     str(tmp_path / "r2" / "summary.json"), "--out", str(out)]) == 0
    assert out.stat().st_size > 0


def test_cli_exit_codes(dataset, tmp_path):
    assert cli.main(["eval", "--data", str(dataset), "--resolution", "100", "--out", str(tmp_path)]) == 3
    assert cli.main(["eval", "--data", str(tmp_path / "missing"), "--out", str(tmp_path)]) == 3
    with pytest.raises(SystemExit) as info:
        cli.main(["eval", "--bogus"])
    assert info.value.code == 3
    assert cli.main(["eval", "--data", str(dataset), "--resolution", "64", "--out", str(tmp_path / "o"),
                     "--point-backend", "cache", "--point-cache", str(tmp_path / "none")]) == 2


def test_cli_synth(tmp_path):
    assert cli.main(["synth", "--out", str(tmp_path), "--sequences", "2", "--frames", "4",
                     "--eps-end", "0.5"]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["seq000", "seq001"]
    assert len(load_sequence(tmp_path / "seq001")) == 4
