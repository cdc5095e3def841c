from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from photocal.dataset import CalibRecord
from photocal.evaluation import (
    Trajectory,
    ate,
    ate_rmse,
    associate,
    error_heatmap,
    improvement_pct,
    load_table,
    load_trajectory,
    mean_relative_improvement,
    param_errors,
    round_display,
    save_trajectory,
)
from photocal.raster import FormatError

from oracles import horn_rmse, random_rotation

TABLE = Path(__file__).parent / "data" / "ate_table.csv"


def rot_z(deg):
    a = np.radians(deg)
    return np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]])


def traj(n=50, seed=0):
    rng = np.random.default_rng(seed)
    return Trajectory(np.arange(n) * 0.1, np.cumsum(rng.normal(size=(n, 3)), axis=0))


def test_param_errors_identical_is_zero():
    truth = CalibRecord((0.3, -0.2, 0.1, 0.05), (-0.3, -0.1, -0.05), (0.5, 2.0), (0, 1))
    assert all(v == 0 for _, v in param_errors(truth, truth).rows())


def test_param_errors_constant_offset(monkeypatch):
    # no monotone response sits a constant 2 levels off another (both pin 0 and 255), so shift one curve directly
    import photocal.evaluation as ev

    truth = CalibRecord.identity([0, 1])
    real = ev.response_eval

    def shifted(params, x):
        out = real(params, x)
        return out + 2.0 if params.c == (1e-9, 0.0, 0.0, 0.0) else out

    monkeypatch.setattr(ev, "response_eval", shifted)
    est = CalibRecord((1e-9, 0, 0, 0), (0, 0, 0), (1, 1), (0, 1))
    errs = param_errors(est, truth)
    assert errs.response_mae == pytest.approx(2.0) and errs.response_max == pytest.approx(2.0)


def test_param_errors_exposure_gauge_and_ms():
    truth = CalibRecord((0,) * 4, (0,) * 3, (0.5, 2.0), (0, 1))
    errs = param_errors(truth, truth, {0: 5.0, 1: 20.0})
    assert errs.exposure_unit == "ms" and errs.exposure_mae == pytest.approx(0.0, abs=1e-12)
    est = CalibRecord((0,) * 4, (0,) * 3, (1.0, 1.0), (0, 1))
    errs = param_errors(est, truth)
    s = (0.5 + 2.0) / 2.0
    assert errs.exposure_mae == pytest.approx((abs(s - 0.5) + abs(s - 2.0)) / 2)
    with pytest.raises(ValueError):
        param_errors(truth, CalibRecord.identity([0, 2]))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.2, 0.2), min_size=8, max_size=8), st.lists(st.floats(-0.3, 0.0), min_size=6, max_size=6))
def test_param_errors_symmetric(c, v):
    try:
        a = CalibRecord(c[:4], v[:3], (1.0,), (0,))
        b = CalibRecord(c[4:], v[3:], (1.0,), (0,))
        ab, ba = param_errors(a, b), param_errors(b, a)
    except ValueError:
        return
    assert ab.response_mae == pytest.approx(ba.response_mae, abs=1e-12)
    assert ab.vignette_max == pytest.approx(ba.vignette_max, abs=1e-12)


def test_ate_examples():
    t = traj()
    assert ate_rmse(t, t) == 0.0
    moved = t.transformed(rot_z(30), (1, 2, 3))
    assert ate_rmse(moved, t) == pytest.approx(0.0, abs=1e-9)


def test_ate_matches_quaternion_oracle():
    rng = np.random.default_rng(5)
    truth = Trajectory(np.arange(100) * 0.05, rng.uniform(-5, 5, (100, 3)))
    offsets = rng.normal(scale=0.2, size=(100, 3))
    R, t = random_rotation(rng), rng.normal(size=3)
    est = Trajectory(truth.timestamps, (truth.positions + offsets) @ R.T + t)
    assert ate_rmse(est, truth) == pytest.approx(horn_rmse(est.positions, truth.positions), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**16))
def test_ate_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    truth = traj(30, seed)
    est = Trajectory(truth.timestamps, truth.positions + rng.normal(scale=0.1, size=(30, 3)))
    moved = est.transformed(random_rotation(rng), rng.normal(size=3) * 10)
    assert ate_rmse(moved, truth) == pytest.approx(ate_rmse(est, truth), abs=1e-9)


def test_association():
    a = Trajectory([0.0, 0.1, 0.2, 0.3], np.zeros((4, 3)))
    b = Trajectory([0.005, 0.19, 0.5], np.zeros((3, 3)))
    ie, it = associate(a, b, 0.02)
    assert list(ie) == [0, 2] and list(it) == [0, 1]
    with pytest.raises(ValueError):
        ate(a, b)


def test_degenerate_trajectory_flagged():
    line = Trajectory(np.arange(10.0), np.outer(np.arange(10.0), [1, 2, 0]))
    assert ate(line, line).degenerate
    assert not ate(traj(), traj()).degenerate
    with pytest.raises(ValueError):
        Trajectory([0.0, 0.0], np.zeros((2, 3)))


def test_trajectory_file_round_trip(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("# t x y z qx qy qz qw\n0.0 1 2 3 0 0 0 1\n0.1,4,5,6\n")
    t = load_trajectory(p)
    np.testing.assert_array_equal(t.positions, [[1, 2, 3], [4, 5, 6]])
    save_trajectory(t, tmp_path / "u.txt")
    back = load_trajectory(tmp_path / "u.txt")
    np.testing.assert_array_equal(back.positions, t.positions)
    np.testing.assert_array_equal(back.timestamps, t.timestamps)


def test_improvement_examples():
    assert round_display(improvement_pct(0.358, 0.333)) == 7.5
    assert round_display(improvement_pct(0.137, 0.123)) == 11.4
    assert improvement_pct(0.4, 0.4) == 0.0
    assert mean_relative_improvement([(1.0, 0.5)]) == 50.0
    assert mean_relative_improvement([(0.3, 0.3), (2.0, 2.0)]) == 0.0


@settings(max_examples=100)
@given(st.floats(1e-3, 100), st.floats(1e-3, 100))
def test_improvement_sign(a, b):
    assert (improvement_pct(a, b) > 0) == (a > b)


def test_table_mean_improvement():
    rows = load_table(TABLE)
    assert len(rows) == 12
    mean = mean_relative_improvement([(r.baseline, r.ours) for r in rows])
    assert mean == pytest.approx(57.6, abs=0.1)
    assert round_display(improvement_pct(rows[0].reference, rows[0].ours)) == 7.5


def test_table_header_checked(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("name,dso,ours\nx,1,2\n")
    with pytest.raises(FormatError):
        load_table(p)


def spiral(n=400, seed=2):
    rng = np.random.default_rng(seed)
    th = np.linspace(0, 6 * np.pi, n)
    rad = 0.5 + th
    pos = np.stack([rad * np.cos(th), rad * np.sin(th), 0.1 * th], axis=1)
    truth = Trajectory(np.arange(n) * 0.1, pos)
    noise = rng.normal(size=(n, 3)) * (0.01 * rad)[:, None]
    return Trajectory(truth.timestamps, pos + noise), truth


def test_heatmap_matches_binning_oracle():
    est, truth = spiral()
    grid = 8
    hm = error_heatmap(est, truth, grid=grid)
    res = ate(est, truth)
    xy = truth.positions[:, :2]
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    sums = {}
    for (x, y), err in zip(xy, res.errors):
        c = min(int((x - lo[0]) / (hi[0] - lo[0]) * grid), grid - 1)
        r = min(int((y - lo[1]) / (hi[1] - lo[1]) * grid), grid - 1)
        sums.setdefault((r, c), []).append(err)
    for r in range(grid):
        for c in range(grid):
            if (r, c) in sums:
                assert hm.counts[r, c] == len(sums[(r, c)])
                assert hm.mean_error[r, c] == pytest.approx(np.mean(sums[(r, c)]), abs=1e-9)
            else:
                assert hm.counts[r, c] == 0 and np.isnan(hm.mean_error[r, c])
    assert hm.counts.sum() == len(truth)
    lines = hm.to_csv().splitlines()
    assert lines[0] == "row,col,count,mean_error" and len(lines) == grid * grid + 1
    assert hm.to_raster().data.max() == 65535


def test_heatmap_trivial_cases():
    _, truth = spiral()
    hm = error_heatmap(truth, truth)
    assert np.all(hm.mean_error[hm.counts > 0] == 0)
    shifted = Trajectory(truth.timestamps, truth.positions + [0.3, -0.4, 0.0])
    hm = error_heatmap(shifted, truth, align=False)
    np.testing.assert_allclose(hm.mean_error[hm.counts > 0], 0.5, atol=1e-12)
