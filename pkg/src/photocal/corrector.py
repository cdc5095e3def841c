"""Photometric correction of frames and a brightness-constancy score for tracks."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import CalibRecord
from .raster import Raster8, Raster16, round_half_away
from .response import ResponseParams
from .tracking import TrackSet, _bilinear
from .vignette import RadiusMap, v_normalized

FULL_SCALE = 65535


@dataclass(frozen=True, eq=False)
class Corrected:
    image: Raster16
    saturated: int  # pixels whose corrected irradiance exceeded 1 and were clamped


def correct(img: Raster8, record: CalibRecord, frame_id: int, normalize_exposure: bool = True) -> Corrected:
    """val = f^-1(I) / V(r), divided by the frame's exposure when normalize_exposure is set."""
    rmap = RadiusMap(img.width, img.height, record.center)
    e = record.exposure_of(frame_id)  # KeyError for unknown frames
    response = ResponseParams(record.c)
    val = response.lut(img.data.astype(np.float64)) / v_normalized(record.v, rmap.grid())
    if normalize_exposure:
        val = val / e
    saturated = int(np.count_nonzero(val > 1.0))
    out = round_half_away(np.clip(val, 0.0, 1.0) * FULL_SCALE).astype(np.uint16)
    return Corrected(Raster16(out), saturated)


def correct_frame(img: Raster8, record: CalibRecord, frame_id: int, normalize_exposure: bool = True) -> Raster16:
    return correct(img, record, frame_id, normalize_exposure).image


def rescale_frame(img: Raster8) -> Raster16:
    """The uncorrected baseline: I / 255 on the 16-bit scale."""
    return Raster16(round_half_away(img.data.astype(np.float64) / 255.0 * FULL_SCALE).astype(np.uint16))


@dataclass(frozen=True, eq=False)
class ConstancyReport:
    point_ids: tuple[int, ...]
    std: np.ndarray  # population std of each track's corrected samples, 16-bit units
    n_obs: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.std))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["track_id", "std", "n_obs"])
        for pid, s, n in zip(self.point_ids, self.std, self.n_obs):
            w.writerow([pid, f"{s:.6f}", int(n)])
        return buf.getvalue()


def _touches_clipped(img: Raster8, x: float, y: float) -> bool:
    """True if a pixel with nonzero bilinear weight at (x, y) is 0 or 255."""
    x0 = min(int(np.floor(x)), img.width - 2)
    y0 = min(int(np.floor(y)), img.height - 2)
    fx, fy = x - x0, y - y0
    patch = img.data[y0 : y0 + 2, x0 : x0 + 2]
    weight = np.outer([1.0 - fy, fy], [1.0 - fx, fx])
    clipped = (patch == 0) | (patch == 255)
    return bool(np.any(clipped & (weight > 0)))


def constancy_score(
    tracks: TrackSet,
    frames: Sequence[Raster16],
    frame_ids: Sequence[int],
    sources: Sequence[Raster8] | None = None,
) -> ConstancyReport:
    """Per-track spread of bilinear samples across the corrected frames.

    With the uncorrected 8-bit sources given, samples that touch a clipped
    source pixel (0 or 255) are skipped: their irradiance is unknown.
    Observations in frames that are not supplied are ignored; tracks left
    with fewer than two samples are skipped.
    """
    if len(tracks) == 0:
        raise ValueError("no tracks to score")
    index = {fid: i for i, fid in enumerate(frame_ids)}
    pids, stds, counts = [], [], []
    for pid, obs in tracks.items():
        vals = []
        for o in obs:
            if o.frame_id not in index:
                continue
            img = frames[index[o.frame_id]]
            if not (0 <= o.x <= img.width - 1 and 0 <= o.y <= img.height - 1):
                raise ValueError(f"track {pid} frame {o.frame_id}: ({o.x}, {o.y}) outside the image")
            if sources is not None and _touches_clipped(sources[index[o.frame_id]], o.x, o.y):
                continue
            vals.append(float(_bilinear(img.data, np.float64(o.x), np.float64(o.y))))
        if len(vals) < 2:
            continue
        pids.append(pid)
        stds.append(float(np.std(vals)))
        counts.append(len(vals))
    if not pids:
        raise ValueError("no track is observed in two of the given frames")
    return ConstancyReport(tuple(pids), np.array(stds), np.array(counts))
