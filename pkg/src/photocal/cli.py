"""photocal command line.

Exit codes: 0 success, 1 I/O or format error, 2 usage, 3 calibration did not
converge (record still written), 4 insufficient data.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .calib import CalibConfig, InsufficientData, calibrate
from .corrector import constancy_score, correct, rescale_frame
from .dataset import (
    frame_filename,
    load_calib,
    load_sequence,
    load_tracks,
    read_times,
    save_calib,
    save_tracks,
    write_sequence,
)
from .evaluation import (
    error_heatmap,
    ate,
    improvement_pct,
    load_table,
    load_trajectory,
    mean_relative_improvement,
    param_errors,
    round_display,
)
from .quality import sequence_entropy
from .raster import FormatError, write_pgm
from .synth import SynthSpec, generate
from .tracking import track_sequence

log = logging.getLogger("photocal")

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_NOT_CONVERGED, EXIT_INSUFFICIENT = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


def fmt(x: float) -> str:
    return f"{x:.6f}"


def _emit(rows, out: str | None, header=None) -> None:
    """Write CSV rows to a file, or stdout when out is None."""
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(header)
        w.writerows(rows)
    finally:
        if out:
            fh.close()


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("PHOTOCAL_THREADS")
    if env is None:
        return 1
    try:
        n = int(env)
    except ValueError:
        raise UsageError(f"PHOTOCAL_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise UsageError("PHOTOCAL_THREADS must be at least 1")
    return n


# ---- synth


def _parse_value(raw: str, current):
    parts = raw.split()
    if isinstance(current, tuple):
        kind = type(current[0])
        return tuple(kind(p) for p in parts)
    if current is None:
        return tuple(int(p) for p in parts) if parts else None
    if len(parts) != 1:
        raise ValueError(f"expected one value, got {raw!r}")
    return type(current)(parts[0])


def read_spec_file(path: str | os.PathLike) -> dict:
    """'name = value' lines naming SynthSpec fields; tuples are space separated."""
    defaults = SynthSpec()
    names = {f.name for f in dataclasses.fields(SynthSpec)}
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in names:
            raise FormatError(f"{path}:{lineno}: unknown or malformed setting {raw!r}")
        try:
            out[key] = _parse_value(value.strip(), getattr(defaults, key))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    return out


def cmd_synth(args) -> int:
    fields = read_spec_file(args.spec) if args.spec else {}
    for name in ("seed", "frames", "width", "height", "noise_sigma", "n_points"):
        val = getattr(args, name)
        if val is not None:
            fields[name] = val
    try:
        spec = SynthSpec(**fields)
        seq = generate(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    write_sequence(out, seq.frames, seq.metas)
    save_tracks(seq.tracks, out / "tracks.txt")
    save_calib(seq.truth, out / "truth.txt")
    _emit(
        [["frames", len(seq.frames)], ["tracks", len(seq.tracks)], ["observations", seq.tracks.n_observations]],
        None,
        ["key", "value"],
    )
    return EXIT_OK


# ---- calibrate


def _calib_config(args) -> CalibConfig:
    try:
        return CalibConfig(
            huber_h=args.huber_h,
            mu=args.mu,
            lambda0=args.lambda0,
            max_outer=args.max_outer,
            step_tol=args.step_tol,
            track_reject=args.track_reject,
            threads=_threads(args),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_calibrate(args) -> int:
    cfg = _calib_config(args)
    frames, metas = load_sequence(args.seq)
    if not frames:
        raise InsufficientData(f"no frames in {args.seq}")
    fids = [m.frame_id for m in metas]
    if args.tracks:
        tracks = load_tracks(args.tracks, frames, fids)
    else:
        tracks = track_sequence(frames, frame_ids=fids)
    times = None
    if not args.ignore_exposure_times and all(m.exposure_ms is not None for m in metas):
        times = {m.frame_id: m.exposure_ms for m in metas}
    else:
        log.warning("no exposure times; the response is only determined up to an exponential ambiguity")
    res = calibrate(tracks, (frames[0].width, frames[0].height), cfg, frame_ids=fids, exposure_times=times)
    record = res.state.to_record()
    save_calib(record, args.out)
    log_path = args.energy_log or str(Path(args.out).with_suffix(".energy.csv"))
    _emit(
        [[h.iteration, fmt(h.lam), fmt(h.energy), int(h.accepted)] for h in res.history],
        log_path,
        ["iter", "lambda", "energy", "accepted"],
    )
    summary = [
        ["iterations", res.iterations],
        ["converged", int(res.converged)],
        ["energy", fmt(res.report.energy)],
        ["points", len(res.state.point_ids)],
        ["rejected_points", len(res.rejected_points)],
    ]
    if args.report:
        from . import plotting

        rdir = Path(args.report)
        rdir.mkdir(parents=True, exist_ok=True)
        truth = load_calib(args.truth) if args.truth else None
        plotting.plot_response(record, rdir / "response.png", truth)
        plotting.plot_vignette(record, rdir / "vignette.png", truth)
        plotting.plot_exposures(record, rdir / "exposures.png", truth)
        plotting.plot_energy(res.history, rdir / "energy.png")
        _emit(summary, str(rdir / "summary.csv"), ["key", "value"])
    _emit(summary, None, ["key", "value"])
    if not res.converged:
        log.warning("calibration stopped after %d iterations without converging", res.iterations)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


# ---- correct


def cmd_correct(args) -> int:
    frames, metas = load_sequence(args.seq)
    record = load_calib(args.calib)
    fids = [m.frame_id for m in metas]
    missing = [f for f in fids if f not in record.frame_ids]
    if missing:
        raise UsageError(f"calibration has no exposure for frames {missing[:5]}")
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    corrected, sat_rows = [], []
    for img, fid in zip(frames, fids):
        c = correct(img, record, fid, args.normalize_exposure)
        write_pgm(c.image, out / "images" / frame_filename(fid))
        corrected.append(c.image)
        sat_rows.append([fid, c.saturated])
    _emit(sat_rows, str(out / "saturation.csv"), ["frame_id", "saturated"])
    track_path = Path(args.tracks) if args.tracks else Path(args.seq) / "tracks.txt"
    rows = [["frames", len(frames)], ["saturated", sum(r[1] for r in sat_rows)]]
    if track_path.exists():
        tracks = load_tracks(track_path, frames, fids)
        score = constancy_score(tracks, corrected, fids, frames)
        (out / "constancy.csv").write_text(score.to_csv())
        baseline = constancy_score(tracks, [rescale_frame(f) for f in frames], fids, frames)
        rows += [["constancy_mean", fmt(score.mean)], ["baseline_constancy_mean", fmt(baseline.mean)]]
    _emit(rows, None, ["key", "value"])
    return EXIT_OK


# ---- metrics


def cmd_entropy(args) -> int:
    frames, metas = load_sequence(args.seq)
    if not frames:
        raise InsufficientData(f"no frames in {args.seq}")
    values, mean = sequence_entropy(frames)
    rows = [[m.frame_id, fmt(v)] for m, v in zip(metas, values)] + [["mean", fmt(mean)]]
    _emit(rows, args.out, ["frame_id", "entropy"])
    return EXIT_OK


def cmd_ate(args) -> int:
    est = load_trajectory(args.est)
    gt = load_trajectory(args.gt)
    try:
        res = ate(est, gt, args.max_dt, args.scale, not args.no_align)
    except ValueError as exc:
        raise InsufficientData(str(exc)) from None
    rows = [["ate_rmse", fmt(res.rmse)], ["pairs", res.n_pairs], ["scale", fmt(res.scale)], ["degenerate", int(res.degenerate)]]
    if args.heatmap:
        hm = error_heatmap(est, gt, args.grid, args.max_dt, args.scale, not args.no_align)
        hpath = Path(args.heatmap)
        hpath.write_text(hm.to_csv())
        write_pgm(hm.to_raster(), hpath.with_suffix(".pgm"))
        from . import plotting

        plotting.plot_heatmap(hm, hpath.with_suffix(".png"))
    _emit(rows, args.out, ["key", "value"])
    return EXIT_OK


def cmd_eval_params(args) -> int:
    est = load_calib(args.est)
    truth = load_calib(args.truth)
    truth_ms = None
    if args.truth_times:
        metas = read_times(args.truth_times)
        truth_ms = {m.frame_id: m.exposure_ms for m in metas if m.exposure_ms is not None}
    try:
        errs = param_errors(est, truth, truth_ms)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = [[k, fmt(v)] for k, v in errs.rows()] + [["exposure_unit", errs.exposure_unit]]
    if args.report:
        from . import plotting

        rdir = Path(args.report)
        rdir.mkdir(parents=True, exist_ok=True)
        plotting.plot_response(est, rdir / "response.png", truth)
        plotting.plot_vignette(est, rdir / "vignette.png", truth)
        plotting.plot_exposures(est, rdir / "exposures.png", truth)
        _emit(rows, str(rdir / "param_errors.csv"), ["metric", "value"])
    _emit(rows, args.out, ["metric", "value"])
    return EXIT_OK


def cmd_table(args) -> int:
    table = load_table(args.csv)
    if not table:
        raise InsufficientData(f"{args.csv} has no rows")
    try:
        rows = []
        for r in table:
            pct = improvement_pct(r.reference, r.ours)
            rows.append([r.name, fmt(pct), f"{round_display(pct):.1f}"])
        mean = mean_relative_improvement([(r.baseline, r.ours) for r in table])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows.append(["mean_improvement_over_baseline", fmt(mean), f"{round_display(mean):.1f}"])
    _emit(rows, args.out, ["name", "improvement_pct", "display"])
    return EXIT_OK


# ---- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="photocal", description="Photometric calibration of image sequences.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: $PHOTOCAL_THREADS or 1)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic sequence with known calibration")
    s.add_argument("--out", required=True)
    s.add_argument("--spec", help="file of 'name = value' generator settings")
    s.add_argument("--seed", type=int)
    s.add_argument("--frames", type=int)
    s.add_argument("--width", type=int)
    s.add_argument("--height", type=int)
    s.add_argument("--noise", dest="noise_sigma", type=float, help="gaussian noise, intensity levels")
    s.add_argument("--points", dest="n_points", type=int)
    s.set_defaults(func=cmd_synth)

    d = CalibConfig()
    c = sub.add_parser("calibrate", help="estimate response, vignetting and exposures")
    c.add_argument("--seq", required=True)
    c.add_argument("--tracks", help="'point_id frame_id x y' file; default runs the built-in tracker")
    c.add_argument("--out", required=True)
    c.add_argument("--energy-log", help="CSV path (default: <out>.energy.csv)")
    c.add_argument("--report", help="directory for figures and a summary CSV")
    c.add_argument("--truth", help="true calibration to overlay in report figures")
    c.add_argument("--ignore-exposure-times", action="store_true", help="do not use exposure_ms from times.txt")
    c.add_argument("--huber-h", type=float, default=d.huber_h)
    c.add_argument("--mu", type=float, default=d.mu)
    c.add_argument("--lambda0", type=float, default=d.lambda0)
    c.add_argument("--max-outer", type=int, default=d.max_outer)
    c.add_argument("--step-tol", type=float, default=d.step_tol)
    c.add_argument("--track-reject", type=float, default=d.track_reject)
    c.set_defaults(func=cmd_calibrate)

    k = sub.add_parser("correct", help="write photometrically corrected 16-bit frames")
    k.add_argument("--seq", required=True)
    k.add_argument("--calib", required=True)
    k.add_argument("--out", required=True)
    k.add_argument("--tracks", help="tracks for the constancy score (default: <seq>/tracks.txt if present)")
    k.add_argument("--normalize-exposure", action="store_true")
    k.set_defaults(func=cmd_correct)

    e = sub.add_parser("entropy", help="gray-level entropy per frame")
    e.add_argument("--seq", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_entropy)

    a = sub.add_parser("ate", help="absolute trajectory error after alignment")
    a.add_argument("--est", required=True)
    a.add_argument("--gt", required=True)
    a.add_argument("--max-dt", type=float, default=0.02, help="association tolerance in seconds")
    a.add_argument("--scale", action="store_true", help="also fit a scale factor")
    a.add_argument("--no-align", action="store_true")
    a.add_argument("--heatmap", help="CSV path; a .pgm and .png are written alongside")
    a.add_argument("--grid", type=int, default=16)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ate)

    v = sub.add_parser("eval-params", help="compare a calibration with ground truth")
    v.add_argument("--est", required=True)
    v.add_argument("--truth", required=True)
    v.add_argument("--truth-times", help="times.txt with true exposure_ms; errors then in ms")
    v.add_argument("--report", help="directory for comparison figures")
    v.add_argument("--out")
    v.set_defaults(func=cmd_eval_params)

    t = sub.add_parser("table", help="improvement percentages from a name,baseline,reference,ours CSV")
    t.add_argument("--csv", required=True)
    t.add_argument("--out")
    t.set_defaults(func=cmd_table)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"photocal: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InsufficientData as exc:
        print(f"photocal: insufficient data: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    except (OSError, FormatError, KeyError) as exc:
        print(f"photocal: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
