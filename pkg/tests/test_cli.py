import csv

import numpy as np
import pytest

from splatsr import psnr, sde_random_init
from splatsr.cli import main
from splatsr.io import read_image, write_image, write_sde_weights
from splatsr.synthetic import make_smooth_image


@pytest.fixture
def workspace(tmp_path):
    hr = make_smooth_image(32, 32, 4, seed=20)
    write_image(tmp_path / "hr.img", hr)
    return tmp_path


def run(args):
    return main([str(a) for a in args])


def test_synth_then_fit_then_render_then_eval(workspace):
    ws = workspace
    assert run(["synth", ws / "hr.img", "--scale", "2", "--noise", "10",
                "--seed", "3", "--out", ws / "lr.img"]) == 0
    assert run(["fit", ws / "lr.img", "--steps", "30", "--k", "8",
                "--out", ws / "set.vbgs"]) == 0
    assert (ws / "set.vbgs").exists()
    assert (ws / "set.vbgs.loss.csv").exists()
    assert run(["render", ws / "set.vbgs", "--scale", "1", "--strategy", "vbgs:8",
                "--reference", ws / "lr.img", "--out", ws / "rec.img"]) == 0
    assert run(["eval", ws / "rec.img", ws / "lr.img",
                "--out", ws / "report.csv"]) == 0

    # pipeline self-consistency: the final trace row describes the artifacts
    with open(ws / "set.vbgs.loss.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "loss", "psnr"]
    final_psnr = float(rows[-1][2])
    pipeline_psnr = psnr(read_image(ws / "rec.img"), read_image(ws / "lr.img"))
    assert abs(final_psnr - pipeline_psnr) < 1e-6

    with open(ws / "report.csv") as fh:
        report = {row[0]: row[1] for row in csv.reader(fh)}
    assert float(report["psnr_db"]) == pytest.approx(pipeline_psnr, abs=1e-9)


def test_render_scales_and_strategies(workspace):
    ws = workspace
    run(["synth", ws / "hr.img", "--scale", "2", "--noise", "0", "--seed", "0",
         "--out", ws / "lr.img"])
    run(["fit", ws / "lr.img", "--steps", "5", "--k", "8", "--out", ws / "set.vbgs"])
    for scale, strategy in [("2", "direct"), ("3", "raster:3"), ("4.5", "vbgs:8")]:
        args = ["render", ws / "set.vbgs", "--scale", scale, "--strategy", strategy,
                "--out", ws / f"out{scale}.img"]
        if strategy.startswith("vbgs"):
            args += ["--reference", ws / "lr.img"]
        assert run(args) == 0
        img = read_image(ws / f"out{scale}.img")
        assert img.meta.width == int(float(scale) * 16)
        assert np.all(np.isfinite(img.data))


def test_usage_errors_exit_two(workspace):
    ws = workspace
    run(["synth", ws / "hr.img", "--scale", "2", "--noise", "0", "--seed", "0",
         "--out", ws / "lr.img"])
    run(["fit", ws / "lr.img", "--steps", "2", "--k", "4", "--out", ws / "set.vbgs"])
    # vbgs without reference
    assert run(["render", ws / "set.vbgs", "--scale", "2", "--strategy", "vbgs:4",
                "--out", ws / "x.img"]) == 2
    # malformed strategy
    assert run(["render", ws / "set.vbgs", "--scale", "2", "--strategy", "nearest",
                "--out", ws / "x.img"]) == 2
    assert run(["render", ws / "set.vbgs", "--scale", "2", "--strategy", "vbgs:abc",
                "--out", ws / "x.img"]) == 2
    # unknown flag / missing required -> argparse exits 2
    assert run(["render", ws / "set.vbgs", "--scale", "2"]) == 2
    assert run(["no-such-command"]) == 2


def test_runtime_errors_exit_one(workspace):
    ws = workspace
    assert run(["eval", ws / "missing.img", ws / "hr.img"]) == 1
    assert run(["render", ws / "hr.img", "--scale", "2", "--strategy", "direct",
                "--out", ws / "x.img"]) == 1  # not a set file
    # shape mismatch between prediction and ground truth
    small = make_smooth_image(8, 8, 4, seed=1)
    write_image(ws / "small.img", small)
    assert run(["eval", ws / "small.img", ws / "hr.img"]) == 1
    # synth with non-reducing scale
    assert run(["synth", ws / "hr.img", "--scale", "1", "--noise", "0",
                "--out", ws / "x.img"]) == 1


def test_gradcheck_command(workspace):
    assert run(["gradcheck", "--seed", "0", "--trials", "2"]) == 0


def test_sde_command(workspace):
    ws = workspace
    weights = sde_random_init(4, channels=4, patch=5, hidden=16)
    write_sde_weights(ws / "w.vbgs", weights)
    assert run(["sde", ws / "hr.img", "--scale", "1.5", "--weights", ws / "w.vbgs",
                "--out", ws / "sde.img"]) == 0
    out = read_image(ws / "sde.img")
    assert out.meta.width == 48 and out.meta.height == 48
    # weight/channel mismatch is a runtime failure
    bad = sde_random_init(4, channels=3, patch=5, hidden=16)
    write_sde_weights(ws / "bad.vbgs", bad)
    assert run(["sde", ws / "hr.img", "--scale", "1.5", "--weights", ws / "bad.vbgs",
                "--out", ws / "x.img"]) == 1


def test_bench_command_rows(workspace):
    ws = workspace
    run(["synth", ws / "hr.img", "--scale", "2", "--noise", "0", "--seed", "0",
         "--out", ws / "lr.img"])
    run(["fit", ws / "lr.img", "--steps", "2", "--k", "4", "--out", ws / "set.vbgs"])
    assert run(["bench", ws / "set.vbgs", "--scales", "2,3",
                "--strategies", "direct,raster:3,vbgs:4,vbgs_brute:4",
                "--out", ws / "bench.csv"]) == 0
    with open(ws / "bench.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 8  # one row per (scale, strategy)
    assert {row["strategy"] for row in rows} == {"direct", "raster:3", "vbgs:4",
                                                 "vbgs_brute:4"}
    for row in rows:
        assert float(row["seconds"]) > 0
        assert float(row["pixels_per_sec"]) > 0
        if row["strategy"] == "direct":
            assert float(row["max_abs_dev_from_direct"]) == 0.0


def test_dump_params_table(workspace):
    ws = workspace
    run(["synth", ws / "hr.img", "--scale", "2", "--noise", "0", "--seed", "0",
         "--out", ws / "lr.img"])
    run(["fit", ws / "lr.img", "--steps", "2", "--k", "4", "--out", ws / "set.vbgs"])
    assert run(["dump-params", ws / "set.vbgs", "--out", ws / "params.csv"]) == 0
    with open(ws / "params.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 16 * 16
    assert set(rows[0]) == {"index", "x", "y", "sigma_x", "sigma_y", "rho"}
    assert all(float(r["sigma_x"]) > 0 for r in rows[:20])


def test_ingest_command(tmp_path):
    rng = np.random.default_rng(2)
    img8 = rng.integers(0, 256, (5, 6), dtype=np.uint8)
    pgm = tmp_path / "band.pgm"
    pgm.write_bytes(b"P5\n6 5\n255\n" + img8.tobytes())
    assert run(["ingest", "--pgm", pgm, pgm, "--out", tmp_path / "cube.img"]) == 0
    cube = read_image(tmp_path / "cube.img")
    assert cube.meta.bands == 2 and cube.meta.width == 6 and cube.meta.height == 5


def test_fit_scale_consistency_check(workspace):
    ws = workspace
    run(["synth", ws / "hr.img", "--scale", "2", "--noise", "0", "--seed", "0",
         "--out", ws / "lr.img"])
    # --scale 4 contradicts the 2x relationship between lr and hr
    assert run(["fit", ws / "lr.img", "--steps", "2", "--k", "4",
                "--target", ws / "hr.img", "--scale", "4",
                "--out", ws / "set.vbgs"]) == 1
    assert run(["fit", ws / "lr.img", "--steps", "2", "--k", "4",
                "--target", ws / "hr.img", "--scale", "2",
                "--out", ws / "set.vbgs"]) == 0
