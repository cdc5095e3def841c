import filecmp
from pathlib import Path

import numpy as np
import pytest

from photocal.cli import main, read_spec_file
from photocal.dataset import CalibRecord, load_calib, load_sequence, read_times, save_calib
from photocal.evaluation import Trajectory, save_trajectory
from photocal.raster import FormatError, read_pgm

DATA = Path(__file__).parent / "data"
SMALL = ["--frames", "12", "--width", "40", "--height", "32", "--points", "60"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr().out


def kv(text):
    return dict(line.split(",", 1) for line in text.strip().splitlines()[1:])


def same_tree(a: Path, b: Path) -> bool:
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    return files_a == files_b and all(filecmp.cmp(a / f, b / f, shallow=False) for f in files_a)


@pytest.fixture(scope="module")
def small_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("seq")
    assert main(["synth", "--seed", "3", *SMALL, "--out", str(d)]) == 0
    return d


def test_synth_twice_identical(tmp_path, capsys):
    for name in ("a", "b"):
        code, out = run(capsys, "synth", "--seed", 1, "--frames", 10, "--out", tmp_path / name)
        assert code == 0 and kv(out)["frames"] == "10"
    assert same_tree(tmp_path / "a", tmp_path / "b")
    frames, metas = load_sequence(tmp_path / "a")
    assert len(frames) == 10 and all(m.exposure_ms for m in metas)
    assert (tmp_path / "a" / "tracks.txt").exists() and (tmp_path / "a" / "truth.txt").exists()


@pytest.mark.slow
def test_synth_default_writes_200_frames(tmp_path, capsys):
    code, out = run(capsys, "synth", "--out", tmp_path)
    assert code == 0 and kv(out)["frames"] == "200"
    assert len(list((tmp_path / "images").glob("*.pgm"))) == 200


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["synth"])
    assert exc.value.code == 2
    assert main(["synth", "--out", str(tmp_path), "--frames", "1"]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["--threads", "0", "entropy", "--seq", str(tmp_path)])
    assert exc.value.code == 2


def test_spec_file(tmp_path):
    p = tmp_path / "spec.txt"
    p.write_text("# generator settings\nframes = 7\ntrue_v = -0.2 0 0\nradiance_range = 0.3 0.6\n")
    assert read_spec_file(p) == {"frames": 7, "true_v": (-0.2, 0.0, 0.0), "radiance_range": (0.3, 0.6)}
    assert main(["synth", "--spec", str(p), "--width", "24", "--height", "24", "--points", "10",
                 "--out", str(tmp_path / "s")]) == 0
    assert load_calib(tmp_path / "s" / "truth.txt").v == (-0.2, 0.0, 0.0)
    p.write_text("colour = red\n")
    with pytest.raises(FormatError):
        read_spec_file(p)


def test_missing_inputs_exit_1(tmp_path, small_dir):
    assert main(["calibrate", "--seq", str(tmp_path / "nope"), "--out", str(tmp_path / "c.txt")]) == 1
    assert main(["correct", "--seq", str(small_dir), "--calib", str(tmp_path / "nope.txt"), "--out", str(tmp_path / "o")]) == 1
    assert main(["entropy", "--seq", str(tmp_path / "nope")]) == 1


def test_calibrate_max_outer_zero_is_default_init(tmp_path, small_dir, capsys):
    out = tmp_path / "c.txt"
    code, _ = run(capsys, "calibrate", "--seq", small_dir, "--tracks", small_dir / "tracks.txt", "--out", out,
                  "--max-outer", 0, "--ignore-exposure-times")
    assert code == 3
    rec = load_calib(out)
    assert rec == CalibRecord.identity(rec.frame_ids)
    # with exposure times the start is the times scaled to unit geometric mean
    code, _ = run(capsys, "calibrate", "--seq", small_dir, "--tracks", small_dir / "tracks.txt", "--out", out,
                  "--max-outer", 0)
    ms = np.array([m.exposure_ms for m in read_times(small_dir / "times.txt")])
    rec = load_calib(out)
    np.testing.assert_allclose(rec.exposures, ms / np.exp(np.log(ms).mean()), rtol=1e-12)
    assert rec.c == (0.0,) * 4 and rec.v == (0.0,) * 3
    log = (tmp_path / "c.energy.csv").read_text().splitlines()
    assert log[0] == "iter,lambda,energy,accepted" and len(log) == 2


def test_calibrate_report_and_thread_determinism(tmp_path, small_dir, capsys):
    outs = []
    for n in (1, 4):
        d = tmp_path / f"t{n}"
        d.mkdir()
        code, out = run(capsys, "--threads", n, "calibrate", "--seq", small_dir, "--tracks", small_dir / "tracks.txt",
                        "--out", d / "calib.txt", "--max-outer", 8, "--report", d / "report",
                        "--truth", small_dir / "truth.txt")
        assert code in (0, 3)
        outs.append(out)
    assert outs[0] == outs[1]
    assert same_tree(tmp_path / "t1", tmp_path / "t4")
    for name in ("response.png", "vignette.png", "exposures.png", "energy.png", "summary.csv"):
        assert (tmp_path / "t1" / "report" / name).stat().st_size > 0


def test_calibrate_with_builtin_tracker(tmp_path, capsys):
    d = tmp_path / "seq"
    assert main(["synth", "--seed", "2", "--frames", "8", "--width", "64", "--height", "64", "--points", "10",
                 "--out", str(d)]) == 0
    (d / "tracks.txt").unlink()
    code, out = run(capsys, "calibrate", "--seq", d, "--out", tmp_path / "c.txt", "--max-outer", 3)
    # three outer iterations are not enough to converge; the record is still written
    assert code == 3 and int(kv(out)["points"]) > 0
    assert load_calib(tmp_path / "c.txt").frame_ids == tuple(range(8))


def test_calibrate_empty_tracks_exit_4(tmp_path, small_dir):
    empty = tmp_path / "tracks.txt"
    empty.write_text("")
    assert main(["calibrate", "--seq", str(small_dir), "--tracks", str(empty), "--out", str(tmp_path / "c.txt")]) == 4


def test_correct_identity_and_truth(tmp_path, small_dir, capsys):
    frames, metas = load_sequence(small_dir)
    ident = tmp_path / "ident.txt"
    save_calib(CalibRecord.identity([m.frame_id for m in metas]), ident)
    code, out = run(capsys, "correct", "--seq", small_dir, "--calib", ident, "--out", tmp_path / "a")
    assert code == 0
    img = read_pgm(tmp_path / "a" / "images" / "00000.pgm")
    np.testing.assert_array_equal(img.data, np.floor(frames[0].data / 255 * 65535 + 0.5).astype(np.uint16))
    assert (tmp_path / "a" / "saturation.csv").read_text().startswith("frame_id,saturated\n")

    code, out = run(capsys, "correct", "--seq", small_dir, "--calib", small_dir / "truth.txt",
                    "--out", tmp_path / "b", "--normalize-exposure")
    vals = kv(out)
    assert code == 0
    assert float(vals["constancy_mean"]) < 0.5 / 255 * 65535 < float(vals["baseline_constancy_mean"])
    assert (tmp_path / "b" / "constancy.csv").read_text().startswith("track_id,std,n_obs\n")


def test_correct_frame_mismatch_is_usage_error(tmp_path, small_dir):
    short = tmp_path / "short.txt"
    save_calib(CalibRecord.identity([0, 1]), short)
    assert main(["correct", "--seq", str(small_dir), "--calib", str(short), "--out", str(tmp_path / "o")]) == 2


def test_entropy_command(small_dir, capsys):
    code, out = run(capsys, "entropy", "--seq", small_dir)
    lines = out.strip().splitlines()
    assert code == 0 and lines[0] == "frame_id,entropy" and lines[-1].startswith("mean,")
    assert len(lines) == 12 + 2
    assert all(0.0 <= float(line.split(",")[1]) <= 8.0 for line in lines[1:])


def test_ate_command(tmp_path, capsys):
    rng = np.random.default_rng(0)
    t = Trajectory(np.arange(30) * 0.1, np.cumsum(rng.normal(size=(30, 3)), axis=0))
    save_trajectory(t, tmp_path / "gt.txt")
    save_trajectory(t, tmp_path / "est.txt")
    code, out = run(capsys, "ate", "--est", tmp_path / "est.txt", "--gt", tmp_path / "gt.txt",
                    "--heatmap", tmp_path / "hm.csv", "--grid", 4)
    assert code == 0 and kv(out)["ate_rmse"] == "0.000000"
    assert (tmp_path / "hm.pgm").exists() and (tmp_path / "hm.png").stat().st_size > 0
    short = Trajectory([0.0, 0.1], np.zeros((2, 3)))
    save_trajectory(short, tmp_path / "short.txt")
    assert main(["ate", "--est", str(tmp_path / "short.txt"), "--gt", str(tmp_path / "gt.txt")]) == 4


def test_eval_params_identical_is_zero(tmp_path, small_dir, capsys):
    code, out = run(capsys, "eval-params", "--est", small_dir / "truth.txt", "--truth", small_dir / "truth.txt",
                    "--truth-times", small_dir / "times.txt", "--report", tmp_path / "r")
    vals = kv(out)
    assert code == 0 and vals.pop("exposure_unit") == "ms"
    assert all(v == "0.000000" for v in vals.values())
    assert (tmp_path / "r" / "response.png").exists()


def test_table_command(capsys):
    code, out = run(capsys, "table", "--csv", DATA / "ate_table.csv")
    lines = out.strip().splitlines()
    assert code == 0 and lines[0] == "name,improvement_pct,display"
    assert lines[1] == "Room_20,7.507508,7.5"
    assert lines[-1].startswith("mean_improvement_over_baseline,") and lines[-1].endswith(",57.6")
