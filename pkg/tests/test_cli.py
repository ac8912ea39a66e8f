import csv
import os

import numpy as np
import pytest

from equiburst.burst import read_burst
from equiburst.cli import main, read_alignment
from equiburst.io import read_pfm, write_pfm
from equiburst.reconstruct import psnr, reconstruct

from conftest import natural_image


@pytest.fixture(scope="module")
def hr_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("hr") / "hr.pfm"
    write_pfm(str(path), natural_image(128))
    return str(path)


@pytest.fixture(scope="module")
def burst_dir(tmp_path_factory, hr_path):
    out = str(tmp_path_factory.mktemp("burst"))
    assert main(["simulate", "--in", hr_path, "--frames", "4", "--seed", "7", "--theta-max", "2",
                 "--shift-max", "1", "--out-dir", out]) == 0
    return out


def _tree(d):
    return {name: open(os.path.join(d, name), "rb").read() for name in sorted(os.listdir(d))}


def test_simulate_is_byte_identical(tmp_path, hr_path):
    args = ["simulate", "--in", hr_path, "--frames", "3", "--scale", "2", "--seed", "7"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    assert a == b
    assert "config.seed=7" in a["manifest.txt"].decode()


def test_simulate_needs_two_frames(tmp_path, hr_path):
    assert main(["simulate", "--in", hr_path, "--frames", "1", "--out-dir", str(tmp_path)]) == 2


def test_simulate_missing_input_is_io_error(tmp_path):
    assert main(["simulate", "--in", str(tmp_path / "nope.pfm"), "--out-dir", str(tmp_path)]) == 3


def test_static_simulation_gives_identical_frames(tmp_path, hr_path):
    assert main(["simulate", "--in", hr_path, "--frames", "3", "--theta-max", "0", "--shift-max", "0",
                 "--sigma", "0", "--out-dir", str(tmp_path)]) == 0
    frames = read_burst(str(tmp_path)).frames
    assert all(np.array_equal(f.data, frames[0].data) for f in frames)


def test_align_self_burst_is_identity(tmp_path, hr_path):
    d = str(tmp_path / "static")
    main(["simulate", "--in", hr_path, "--frames", "3", "--theta-max", "0", "--shift-max", "0",
          "--out-dir", d])
    assert main(["align", "--burst", d, "--out-dir", d]) == 0
    transforms, residuals = read_alignment(os.path.join(d, "alignment.txt"))
    assert all(tf.is_identity() for tf in transforms)
    assert residuals == [0.0, 0.0, 0.0]


def test_align_corrupt_manifest_names_line(tmp_path, burst_dir, capsys):
    d = tmp_path / "bad"
    d.mkdir()
    for name, data in _tree(burst_dir).items():
        (d / name).write_bytes(data)
    lines = (d / "manifest.txt").read_text().splitlines()
    lines[6] = "frame=1 file=frame_001.pfm theta=oops"
    (d / "manifest.txt").write_text("\n".join(lines) + "\n")
    assert main(["align", "--burst", str(d), "--out-dir", str(d)]) == 3
    assert "line 7" in capsys.readouterr().err


def test_align_missing_burst_is_io_error(tmp_path):
    assert main(["align", "--burst", str(tmp_path / "none"), "--out-dir", str(tmp_path)]) == 3


def test_reconstruct_zero_mode_matches_baseline(tmp_path, burst_dir):
    assert main(["reconstruct", "--burst", burst_dir, "--use-ground-truth", "--features", "zero",
                 "--out-dir", str(tmp_path)]) == 0
    out = read_pfm(str(tmp_path / "sr.pfm"))
    want = reconstruct(read_burst(burst_dir), mode="zero")
    # the PFM container stores float32
    assert np.array_equal(out.data, want.data.astype(np.float32).astype(np.float64))


def test_reconstruct_metrics_match_library(tmp_path, burst_dir, hr_path):
    assert main(["reconstruct", "--burst", burst_dir, "--use-ground-truth", "--gt", hr_path,
                 "--out-dir", str(tmp_path)]) == 0
    with open(tmp_path / "metrics.csv") as fh:
        row = next(csv.DictReader(fh))
    want = psnr(read_pfm(str(tmp_path / "sr.pfm")), read_pfm(hr_path))
    assert float(row["psnr"]) == want


def test_reconstruct_with_alignment_file(tmp_path, burst_dir):
    assert main(["align", "--burst", burst_dir, "--theta-max", "3", "--out-dir", str(tmp_path)]) == 0
    assert main(["reconstruct", "--burst", burst_dir, "--alignment", str(tmp_path / "alignment.txt"),
                 "--features", "equivariant", "--out-dir", str(tmp_path)]) == 0
    assert read_pfm(str(tmp_path / "sr.pfm")).shape == (128, 128, 3)


def test_reconstruct_scale_mismatch_is_usage_error(tmp_path, burst_dir):
    assert main(["reconstruct", "--burst", burst_dir, "--scale", "3", "--use-ground-truth",
                 "--out-dir", str(tmp_path)]) == 2


def test_equiv_zero_angle_gives_zero_row(tmp_path):
    assert main(["equiv", "--h", "1/32", "--theta", "0", "--out-dir", str(tmp_path)]) == 0
    rows = [r for r in (tmp_path / "equiv.csv").read_text().splitlines() if not r.startswith("#")]
    assert len(rows) == 2
    rec = dict(zip(rows[0].split(","), rows[1].split(",")))
    assert float(rec["err_commutation"]) == 0.0 and float(rec["err_equivariance"]) == 0.0


def test_equiv_rerun_is_byte_identical(tmp_path):
    args = ["equiv", "--h", "1/32", "--t", "4,8", "--theta", "pi/t", "--b", "1,-1"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "equiv.csv").read_bytes() == (tmp_path / "b" / "equiv.csv").read_bytes()


def test_sweep_bad_key_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("h=1/32\nwobble=3\n")
    assert main(["sweep", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2
    assert "wobble" in capsys.readouterr().err


def test_sweep_writes_config_and_slopes(tmp_path):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("h=1/32,1/64\nt=4\ntheta=pi/2\nactivation=none\nb=0.5,-0.5\n")
    assert main(["sweep", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 0
    text = (tmp_path / "sweep.csv").read_text()
    assert "# slope_h=" in text and "# config activation=none" in text
