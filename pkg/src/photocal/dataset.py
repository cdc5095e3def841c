"""On-disk formats: image sequences, times.txt, track files and calibration records.

Sequence directory layout::

    <dir>/images/00000.pgm     binary PGM (P5, maxval 255), named by zero-padded frame id
    <dir>/times.txt            optional: "frame_id timestamp exposure_ms" per line, '#' comments
    <dir>/tracks.txt           optional: "point_id frame_id x y" per line
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .raster import FormatError, Raster8, read_pgm, write_pgm
from .response import ResponseParams, inverse_response_samples
from .tracking import Observation, TrackSet, attach_samples
from .vignette import VignetteParams

CALIB_FORMAT = "photocal-calib 1"
GAUGE_TOL = 1e-9


@dataclass(frozen=True)
class SequenceMeta:
    frame_id: int
    timestamp: float | None = None  # seconds
    exposure_ms: float | None = None  # None means unknown

    def __post_init__(self):
        if self.exposure_ms is not None and not self.exposure_ms > 0:
            raise ValueError(f"frame {self.frame_id}: exposure must be positive, got {self.exposure_ms}")


def geometric_mean(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    return float(np.exp(np.mean(np.log(values))))


@dataclass(frozen=True)
class CalibRecord:
    c: tuple[float, ...]
    v: tuple[float, ...]
    exposures: tuple[float, ...]  # relative, geometric mean 1
    frame_ids: tuple[int, ...]
    center: tuple[float, float] | None = None  # vignette center in pixels; None = image midpoint

    def __post_init__(self):
        object.__setattr__(self, "c", tuple(float(a) for a in self.c))
        object.__setattr__(self, "v", tuple(float(a) for a in self.v))
        object.__setattr__(self, "exposures", tuple(float(a) for a in self.exposures))
        object.__setattr__(self, "frame_ids", tuple(int(a) for a in self.frame_ids))
        if self.center is not None:
            object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if len(self.c) != 4 or len(self.v) != 3:
            raise ValueError("record needs 4 response and 3 vignette coefficients")
        ResponseParams(self.c)  # raises for a non-monotone response
        VignetteParams(self.v)  # raises when the attenuation drops below its floor
        if len(self.exposures) != len(self.frame_ids):
            raise ValueError("exposures and frame_ids differ in length")
        if len(set(self.frame_ids)) != len(self.frame_ids):
            raise ValueError("duplicate frame ids in record")
        if not all(e > 0 and math.isfinite(e) for e in self.exposures):
            raise ValueError("exposures must be positive and finite")
        if self.exposures and abs(geometric_mean(self.exposures) - 1.0) > GAUGE_TOL:
            raise ValueError(
                f"exposure gauge violated: geometric mean {geometric_mean(self.exposures)!r} != 1"
            )

    def exposure_of(self, frame_id: int) -> float:
        try:
            return self.exposures[self.frame_ids.index(frame_id)]
        except ValueError:
            raise KeyError(f"frame {frame_id} not in calibration record") from None

    @classmethod
    def identity(cls, frame_ids: Sequence[int]) -> CalibRecord:
        return cls((0.0,) * 4, (0.0,) * 3, (1.0,) * len(frame_ids), tuple(frame_ids))


_FRAME_NAME = re.compile(r"^(\d+)\.pgm$")


def frame_filename(frame_id: int) -> str:
    return f"{frame_id:05d}.pgm"


def read_times(path: str | os.PathLike) -> list[SequenceMeta]:
    metas = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if len(parts) not in (2, 3):
                raise ValueError
            fid = int(parts[0])
            ts = float(parts[1])
            exp = float(parts[2]) if len(parts) == 3 else None
            metas.append(SequenceMeta(fid, ts, exp))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: malformed times line {raw!r}") from None
    return metas


def write_times(metas: Sequence[SequenceMeta], path: str | os.PathLike) -> None:
    lines = ["# frame_id timestamp_s exposure_ms"]
    for m in metas:
        ts = "nan" if m.timestamp is None else repr(float(m.timestamp))
        if m.exposure_ms is None:
            lines.append(f"{m.frame_id:05d} {ts}")
        else:
            lines.append(f"{m.frame_id:05d} {ts} {float(m.exposure_ms)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_sequence(dir_path: str | os.PathLike) -> tuple[list[Raster8], list[SequenceMeta]]:
    root = Path(dir_path)
    if not root.is_dir():
        raise FileNotFoundError(f"sequence directory not found: {root}")
    img_dir = root / "images"
    if not img_dir.is_dir():
        raise FileNotFoundError(f"no images/ folder in {root}")
    entries = []
    for p in img_dir.iterdir():
        m = _FRAME_NAME.match(p.name)
        if m:
            entries.append((int(m.group(1)), p))
    entries.sort()
    frames: list[Raster8] = []
    for fid, p in entries:
        img = read_pgm(p)
        if not isinstance(img, Raster8):
            raise FormatError(f"{p}: expected maxval 255")
        if frames and img.data.shape != frames[0].data.shape:
            raise FormatError(
                f"{p}: {img.width}x{img.height} differs from {frames[0].width}x{frames[0].height}"
            )
        frames.append(img)

    times_path = root / "times.txt"
    known: dict[int, SequenceMeta] = {}
    if times_path.exists():
        for meta in read_times(times_path):
            known[meta.frame_id] = meta
    metas = [known.get(fid, SequenceMeta(fid)) for fid, _ in entries]
    return frames, metas


def write_sequence(
    dir_path: str | os.PathLike, frames: Sequence[Raster8], metas: Sequence[SequenceMeta]
) -> None:
    root = Path(dir_path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    for img, meta in zip(frames, metas):
        write_pgm(img, root / "images" / frame_filename(meta.frame_id))
    write_times(metas, root / "times.txt")


def load_tracks(
    path: str | os.PathLike,
    frames: Sequence[Raster8] | None = None,
    frame_ids: Sequence[int] | None = None,
) -> TrackSet:
    """Read "point_id frame_id x y" lines.

    Without frames the observations carry positions only. With frames, every
    coordinate is bounds-checked and intensity / gradient samples are attached
    (see tracking.attach_samples). Single-observation tracks are discarded.
    """
    seen: set[tuple[int, int]] = set()
    grouped: dict[int, list[Observation]] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if len(parts) != 4:
                raise ValueError
            pid, fid = int(parts[0]), int(parts[1])
            x, y = float(parts[2]), float(parts[3])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: malformed track line {raw!r}") from None
        if (pid, fid) in seen:
            raise FormatError(f"{path}:{lineno}: duplicate observation of point {pid} in frame {fid}")
        seen.add((pid, fid))
        grouped.setdefault(pid, []).append(Observation(fid, x, y))
    tracks = TrackSet({pid: obs for pid, obs in grouped.items() if len(obs) >= 2})
    if frames is not None:
        if frame_ids is None:
            raise ValueError("frame_ids are required when frames are attached")
        tracks = attach_samples(tracks, frames, frame_ids)
    return tracks


def save_tracks(tracks: TrackSet, path: str | os.PathLike) -> None:
    lines = [f"{pid} {o.frame_id} {float(o.x)!r} {float(o.y)!r}" for pid, obs in tracks.items() for o in obs]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def _floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def save_calib(record: CalibRecord, path: str | os.PathLike) -> None:
    lines = [
        "# photometric calibration record",
        f"format = {CALIB_FORMAT}",
        f"response_c = {_floats(record.c)}",
        f"vignette_v = {_floats(record.v)}",
    ]
    if record.center is not None:
        lines.append(f"vignette_center = {_floats(record.center)}")
    lines += [
        f"frame_ids = {' '.join(str(f) for f in record.frame_ids)}",
        f"exposures = {_floats(record.exposures)}",
        "# f^-1 at intensity levels 0..255 (normalized); informational, ignored on load",
        f"inverse_response = {_floats(inverse_response_samples(ResponseParams(record.c)))}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_calib(path: str | os.PathLike) -> CalibRecord:
    fields: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"{path}:{lineno}: expected 'name = value'")
        key = key.strip()
        if key in fields:
            raise FormatError(f"{path}:{lineno}: field {key!r} given twice")
        fields[key] = value.strip()
    if fields.get("format") != CALIB_FORMAT:
        raise FormatError(f"{path}: missing or unknown format tag")
    for key in ("response_c", "vignette_v", "frame_ids", "exposures"):
        if key not in fields:
            raise FormatError(f"{path}: missing field {key!r}")
    try:
        c = [float(t) for t in fields["response_c"].split()]
        v = [float(t) for t in fields["vignette_v"].split()]
        fids = [int(t) for t in fields["frame_ids"].split()]
        exps = [float(t) for t in fields["exposures"].split()]
        center = None
        if "vignette_center" in fields:
            cx, cy = (float(t) for t in fields["vignette_center"].split())
            center = (cx, cy)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed numeric field ({exc})") from None
    try:
        return CalibRecord(c, v, exps, fids, center)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
