"""Evaluation: photometric parameter errors, trajectory error, improvement tables, error heatmaps."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import CalibRecord
from .raster import FormatError, Raster16, round_half_away
from .response import response_eval, ResponseParams
from .vignette import v_normalized

log = logging.getLogger(__name__)

RESPONSE_SAMPLES = np.arange(256) / 255.0
VIGNETTE_SAMPLES = np.linspace(0.0, 1.0, 256)


@dataclass(frozen=True)
class ParamErrors:
    response_mae: float  # intensity levels
    response_max: float
    vignette_mae: float  # attenuation units
    vignette_max: float
    exposure_mae: float  # ms when true exposure times are given, else relative units
    exposure_max: float
    exposure_rel_mean: float  # mean |s e_est - e_true| / e_true
    exposure_unit: str = "relative"

    def rows(self) -> list[tuple[str, float]]:
        return [
            ("response_mae", self.response_mae),
            ("response_max", self.response_max),
            ("vignette_mae", self.vignette_mae),
            ("vignette_max", self.vignette_max),
            ("exposure_mae", self.exposure_mae),
            ("exposure_max", self.exposure_max),
            ("exposure_rel_mean", self.exposure_rel_mean),
        ]


def align_scale(estimated, truth) -> float:
    """Least-squares s minimizing sum (s * estimated - truth)^2."""
    a = np.asarray(estimated, dtype=np.float64)
    b = np.asarray(truth, dtype=np.float64)
    return float(a @ b / (a @ a))


def param_errors(
    estimated: CalibRecord, truth: CalibRecord, truth_ms: Mapping[int, float] | None = None
) -> ParamErrors:
    """Errors of an estimated calibration against ground truth.

    Exposures are compared after a single least-squares scale (the gauge).
    With truth_ms (frame_id -> true exposure in ms) the exposure errors are
    in milliseconds, otherwise in the record's relative units.
    """
    if set(estimated.frame_ids) != set(truth.frame_ids):
        raise ValueError("estimated and true records cover different frames")
    df = np.abs(
        response_eval(ResponseParams(estimated.c), RESPONSE_SAMPLES)
        - response_eval(ResponseParams(truth.c), RESPONSE_SAMPLES)
    )
    dv = np.abs(v_normalized(estimated.v, VIGNETTE_SAMPLES) - v_normalized(truth.v, VIGNETTE_SAMPLES))
    fids = truth.frame_ids
    e_est = np.array([estimated.exposure_of(f) for f in fids])
    if truth_ms is not None:
        missing = [f for f in fids if f not in truth_ms]
        if missing:
            raise ValueError(f"no true exposure time for frames {missing[:5]}")
        e_true = np.array([float(truth_ms[f]) for f in fids])
        unit = "ms"
    else:
        e_true = np.array(truth.exposures)
        unit = "relative"
    de = np.abs(align_scale(e_est, e_true) * e_est - e_true)
    return ParamErrors(
        float(df.mean()),
        float(df.max()),
        float(dv.mean()),
        float(dv.max()),
        float(de.mean()),
        float(de.max()),
        float(np.mean(de / e_true)),
        unit,
    )


@dataclass(frozen=True, eq=False)
class Trajectory:
    timestamps: np.ndarray  # seconds, strictly increasing
    positions: np.ndarray  # (n, 3) meters

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
        p = np.asarray(self.positions, dtype=np.float64)
        if p.ndim != 2 or p.shape != (len(t), 3):
            raise ValueError(f"positions must be (n, 3) matching {len(t)} timestamps, got {p.shape}")
        if len(t) < 1:
            raise ValueError("trajectory needs at least one sample")
        if np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "positions", p)

    def __len__(self):
        return len(self.timestamps)

    def transformed(self, R: np.ndarray, t, scale: float = 1.0) -> Trajectory:
        return Trajectory(self.timestamps, scale * self.positions @ np.asarray(R).T + np.asarray(t))


def load_trajectory(path: str | os.PathLike) -> Trajectory:
    """Lines "timestamp x y z [qx qy qz qw]"; '#' starts a comment, commas count as spaces."""
    ts, pos = [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].replace(",", " ").strip()
        if not line:
            continue
        parts = line.split()
        try:
            if len(parts) < 4:
                raise ValueError
            vals = [float(v) for v in parts[:4]]
        except ValueError:
            raise FormatError(f"{path}:{lineno}: expected 'timestamp x y z', got {raw!r}") from None
        ts.append(vals[0])
        pos.append(vals[1:])
    if not ts:
        raise FormatError(f"{path}: no trajectory samples")
    order = np.argsort(ts, kind="stable")
    try:
        return Trajectory(np.array(ts)[order], np.array(pos)[order])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def save_trajectory(traj: Trajectory, path: str | os.PathLike) -> None:
    lines = [" ".join(repr(float(v)) for v in (t, *xyz)) for t, xyz in zip(traj.timestamps, traj.positions)]
    Path(path).write_text("\n".join(lines) + "\n")


def associate(est: Trajectory, truth: Trajectory, max_dt: float) -> tuple[np.ndarray, np.ndarray]:
    """One-to-one nearest-timestamp pairs within max_dt, closest pairs first.

    Returns index arrays (into est, into truth) ordered by estimated timestamp.
    """
    cand = []
    tt = truth.timestamps
    for i, t in enumerate(est.timestamps):
        k = int(np.searchsorted(tt, t))
        for j in (k - 1, k):
            if 0 <= j < len(tt) and abs(tt[j] - t) <= max_dt:
                cand.append((abs(tt[j] - t), i, j))
    cand.sort()
    used_e, used_t, pairs = set(), set(), []
    for _, i, j in cand:
        if i in used_e or j in used_t:
            continue
        used_e.add(i)
        used_t.add(j)
        pairs.append((i, j))
    pairs.sort()
    if not pairs:
        return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
    ie, it = zip(*pairs)
    return np.array(ie, dtype=np.intp), np.array(it, dtype=np.intp)


def align_rigid(src: np.ndarray, dst: np.ndarray, with_scale: bool = False):
    """Closed-form (R, t, s) minimizing sum |s R src + t - dst|^2 (Kabsch / Umeyama)."""
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    U, S, Vt = np.linalg.svd(xd.T @ xs)
    D = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2, 2] = -1.0
    R = U @ D @ Vt
    s = 1.0
    if with_scale:
        var = float(np.sum(xs * xs))
        if var <= 0:
            raise ValueError("cannot estimate scale from coincident points")
        s = float(np.sum(S * np.diag(D)) / var)
    t = mu_d - s * R @ mu_s
    return R, t, s


def _is_degenerate(points: np.ndarray, rel_tol: float = 1e-9) -> bool:
    """Fewer than two independent directions: the alignment rotation is not unique."""
    sv = np.linalg.svd(points - points.mean(axis=0), compute_uv=False)
    return bool(sv[0] == 0 or sv[1] <= rel_tol * sv[0])


@dataclass(frozen=True, eq=False)
class AteResult:
    rmse: float
    errors: np.ndarray  # per-pair distance after alignment
    truth_xyz: np.ndarray  # associated true positions
    R: np.ndarray
    t: np.ndarray
    scale: float
    degenerate: bool

    @property
    def n_pairs(self) -> int:
        return len(self.errors)


def ate(est: Trajectory, truth: Trajectory, max_dt: float = 0.02, with_scale: bool = False, align: bool = True) -> AteResult:
    ie, it = associate(est, truth, max_dt)
    if len(ie) < 3:
        raise ValueError(f"only {len(ie)} associated pairs within {max_dt} s; need at least 3")
    src = est.positions[ie]
    dst = truth.positions[it]
    degenerate = _is_degenerate(dst)
    if degenerate:
        log.warning("trajectory is collinear or coincident; alignment is not unique")
    if align and not np.array_equal(src, dst):
        R, t, s = align_rigid(src, dst, with_scale)
    else:
        R, t, s = np.eye(3), np.zeros(3), 1.0
    aligned = s * src @ R.T + t
    err = np.linalg.norm(aligned - dst, axis=1)
    return AteResult(float(np.sqrt(np.mean(err**2))), err, dst, R, t, s, degenerate)


def ate_rmse(est: Trajectory, truth: Trajectory, max_dt: float = 0.02, with_scale: bool = False) -> float:
    return ate(est, truth, max_dt, with_scale).rmse


def improvement_pct(reference_ate: float, ours_ate: float) -> float:
    """100 (reference - ours) / ours, relative to our error."""
    if not (reference_ate > 0 and ours_ate > 0):
        raise ValueError("trajectory errors must be positive")
    return 100.0 * (reference_ate - ours_ate) / ours_ate


def round_display(pct: float, places: int = 1) -> float:
    q = 10.0**places
    return float(round_half_away(pct * q) / q)


def mean_relative_improvement(rows: Sequence[tuple[float, float]]) -> float:
    """Mean over rows of 100 (baseline - ours) / baseline."""
    if len(rows) == 0:
        raise ValueError("empty table")
    vals = []
    for base, ours in rows:
        if not (base > 0 and ours > 0):
            raise ValueError("trajectory errors must be positive")
        vals.append(100.0 * (base - ours) / base)
    return float(np.mean(vals))


@dataclass(frozen=True)
class TableRow:
    name: str
    baseline: float
    reference: float
    ours: float


def load_table(path: str | os.PathLike) -> list[TableRow]:
    """CSV with header name,baseline,reference,ours (ATE in meters)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"name", "baseline", "reference", "ours"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise FormatError(f"{path}: header must contain {sorted(need)}")
        for lineno, rec in enumerate(reader, start=2):
            try:
                rows.append(TableRow(rec["name"], float(rec["baseline"]), float(rec["reference"]), float(rec["ours"])))
            except (TypeError, ValueError):
                raise FormatError(f"{path}:{lineno}: malformed row") from None
    return rows


@dataclass(frozen=True, eq=False)
class Heatmap:
    counts: np.ndarray  # (grid, grid) samples per cell; row = y bin, col = x bin
    mean_error: np.ndarray  # NaN where empty
    extent: tuple[float, float, float, float]  # x_min, x_max, y_min, y_max

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "col", "count", "mean_error"])
        for (r, c), n in np.ndenumerate(self.counts):
            w.writerow([r, c, int(n), f"{self.mean_error[r, c]:.6f}" if n else ""])
        return buf.getvalue()

    def to_raster(self) -> Raster16:
        """Cell means scaled so the largest maps to 65535; empty cells are 0."""
        m = np.where(self.counts > 0, self.mean_error, 0.0)
        peak = float(m.max())
        scaled = m / peak if peak > 0 else m
        return Raster16(round_half_away(scaled * 65535).astype(np.uint16))


def _bin(values: np.ndarray, lo: float, hi: float, n: int) -> np.ndarray:
    if hi == lo:
        return np.zeros(len(values), dtype=np.intp)
    idx = np.floor((values - lo) / (hi - lo) * n).astype(np.intp)
    return np.clip(idx, 0, n - 1)


def error_heatmap(
    est: Trajectory,
    truth: Trajectory,
    grid: int = 16,
    max_dt: float = 0.02,
    with_scale: bool = False,
    align: bool = True,
) -> Heatmap:
    """Mean aligned position error binned over the XY bounding box of the true positions."""
    if grid < 2:
        raise ValueError("grid must be at least 2x2")
    res = ate(est, truth, max_dt, with_scale, align)
    xy = res.truth_xyz[:, :2]
    x_min, y_min = xy.min(axis=0)
    x_max, y_max = xy.max(axis=0)
    if x_min == x_max and y_min == y_max:
        raise ValueError("all associated positions coincide; no extent to bin over")
    col = _bin(xy[:, 0], x_min, x_max, grid)
    row = _bin(xy[:, 1], y_min, y_max, grid)
    flat = row * grid + col
    counts = np.bincount(flat, minlength=grid * grid).reshape(grid, grid)
    sums = np.bincount(flat, weights=res.errors, minlength=grid * grid).reshape(grid, grid)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(counts > 0, sums / np.maximum(counts, 1), math.nan)
    return Heatmap(counts, mean, (float(x_min), float(x_max), float(y_min), float(y_max)))
