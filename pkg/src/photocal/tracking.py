"""Tracked scene points: containers, subpixel sampling, and a small SSD patch tracker."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Iterator, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .raster import Raster8

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Observation:
    frame_id: int
    x: float
    y: float
    intensity: float | None = None  # bilinear sample, 0..255
    grad_sq: float | None = None  # squared gradient magnitude, intensity^2 / pixel^2

    @property
    def sampled(self) -> bool:
        return self.intensity is not None and self.grad_sq is not None


class TrackSet(Mapping[int, tuple[Observation, ...]]):
    """point_id -> observations ordered by frame_id.

    Every track holds at least two observations with distinct frame ids.
    """

    def __init__(self, tracks: Mapping[int, Sequence[Observation]] | None = None):
        self._tracks: dict[int, tuple[Observation, ...]] = {}
        for pid in sorted(tracks or {}):
            obs = tuple(sorted(tracks[pid], key=lambda o: o.frame_id))
            frame_ids = [o.frame_id for o in obs]
            if len(set(frame_ids)) != len(frame_ids):
                raise ValueError(f"track {pid} observes a frame twice")
            if len(obs) < 2:
                raise ValueError(f"track {pid} has fewer than 2 observations")
            self._tracks[int(pid)] = obs

    def __getitem__(self, pid: int) -> tuple[Observation, ...]:
        return self._tracks[pid]

    def __iter__(self) -> Iterator[int]:
        return iter(self._tracks)

    def __len__(self) -> int:
        return len(self._tracks)

    def __repr__(self):
        return f"TrackSet({len(self)} tracks, {self.n_observations} observations)"

    @property
    def n_observations(self) -> int:
        return sum(len(obs) for obs in self._tracks.values())

    @property
    def frame_ids(self) -> list[int]:
        return sorted({o.frame_id for obs in self._tracks.values() for o in obs})

    def subset(self, point_ids) -> TrackSet:
        return TrackSet({pid: self._tracks[pid] for pid in point_ids})


def _check_xy(img: Raster8, x, y, margin: float):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    bad = (x < margin) | (y < margin) | (x > img.width - 1 - margin) | (y > img.height - 1 - margin)
    if np.any(bad) or np.any(~np.isfinite(x)) or np.any(~np.isfinite(y)):
        raise ValueError(f"subpixel coordinate outside the image (margin {margin})")
    return x, y


def _bilinear(data: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h, w = data.shape
    x0 = np.minimum(np.floor(x).astype(np.intp), w - 2)
    y0 = np.minimum(np.floor(y).astype(np.intp), h - 2)
    fx = x - x0
    fy = y - y0
    d = data.astype(np.float64, copy=False)
    top = (1.0 - fx) * d[y0, x0] + fx * d[y0, x0 + 1]
    bottom = (1.0 - fx) * d[y0 + 1, x0] + fx * d[y0 + 1, x0 + 1]
    return (1.0 - fy) * top + fy * bottom


def sample_bilinear(img: Raster8, x, y):
    x, y = _check_xy(img, x, y, 0.0)
    out = _bilinear(img.data, x, y)
    return float(out) if out.ndim == 0 else out


def grad_sq_at(img: Raster8, x, y):
    """gx^2 + gy^2 from central differences of bilinear samples one pixel apart."""
    x, y = _check_xy(img, x, y, 1.0)
    gx = 0.5 * (_bilinear(img.data, x + 1.0, y) - _bilinear(img.data, x - 1.0, y))
    gy = 0.5 * (_bilinear(img.data, x, y + 1.0) - _bilinear(img.data, x, y - 1.0))
    out = gx * gx + gy * gy
    return float(out) if out.ndim == 0 else out


def attach_samples(tracks: TrackSet, frames: Sequence[Raster8], frame_ids: Sequence[int]) -> TrackSet:
    """Fill intensity and grad_sq of every observation from the frames.

    Observations inside the one-pixel border (where no gradient exists) are
    dropped, and so are tracks left with fewer than two observations.
    """
    index = {fid: i for i, fid in enumerate(frame_ids)}
    out: dict[int, list[Observation]] = {}
    dropped = 0
    for pid, obs in tracks.items():
        kept = []
        for o in obs:
            if o.frame_id not in index:
                raise ValueError(f"track {pid} references unknown frame {o.frame_id}")
            img = frames[index[o.frame_id]]
            if not (0 <= o.x <= img.width - 1 and 0 <= o.y <= img.height - 1):
                raise ValueError(
                    f"track {pid} frame {o.frame_id}: ({o.x}, {o.y}) outside {img.width}x{img.height} image"
                )
            if not (1 <= o.x <= img.width - 2 and 1 <= o.y <= img.height - 2):
                dropped += 1
                continue
            kept.append(replace(o, intensity=sample_bilinear(img, o.x, o.y), grad_sq=grad_sq_at(img, o.x, o.y)))
        if len(kept) >= 2:
            out[pid] = kept
    if dropped:
        log.warning("dropped %d observations on the one-pixel image border", dropped)
    return TrackSet(out)


@dataclass(frozen=True)
class TrackerConfig:
    grid: int = 32
    per_cell: int = 2
    patch: int = 3  # half-size; patches are (2p+1)^2
    search: int = 6
    ssd_threshold: float = 200.0  # per-pixel SSD above which a track is lost
    reseed_floor: float = 0.5  # fraction of the initial track count
    min_distance: float = 3.0


def _grad_sq_dense(img: np.ndarray) -> np.ndarray:
    g = np.zeros_like(img)
    gx = 0.5 * (img[1:-1, 2:] - img[1:-1, :-2])
    gy = 0.5 * (img[2:, 1:-1] - img[:-2, 1:-1])
    g[1:-1, 1:-1] = gx * gx + gy * gy
    return g


def _detect(img: np.ndarray, cfg: TrackerConfig, occupied: list[tuple[float, float]]) -> list[tuple[float, float]]:
    """Up to cfg.per_cell strongest-gradient pixels per grid cell."""
    h, w = img.shape
    margin = cfg.patch + 1
    g = _grad_sq_dense(img)
    picked: list[tuple[float, float]] = []
    taken = list(occupied)
    for cy in range(0, h, cfg.grid):
        for cx in range(0, w, cfg.grid):
            in_cell = sum(1 for (x, y) in occupied if cx <= x < cx + cfg.grid and cy <= y < cy + cfg.grid)
            need = cfg.per_cell - in_cell
            if need <= 0:
                continue
            y_lo, y_hi = max(cy, margin), min(cy + cfg.grid, h - margin)
            x_lo, x_hi = max(cx, margin), min(cx + cfg.grid, w - margin)
            if y_lo >= y_hi or x_lo >= x_hi:
                continue
            cell = g[y_lo:y_hi, x_lo:x_hi]
            # stable sort keeps raster order among equal gradients
            order = np.argsort(-cell, axis=None, kind="stable")
            for flat in order:
                if need == 0:
                    break
                val = cell.flat[flat]
                if val <= 0.0:
                    break
                yy, xx = divmod(int(flat), cell.shape[1])
                cand = (float(x_lo + xx), float(y_lo + yy))
                if all((cand[0] - px) ** 2 + (cand[1] - py) ** 2 >= cfg.min_distance**2 for px, py in taken):
                    picked.append(cand)
                    taken.append(cand)
                    need -= 1
    return picked


def _parabola_offset(sm: float, s0: float, sp: float) -> float:
    denom = sm - 2.0 * s0 + sp
    if not np.isfinite(denom) or denom <= 0.0:
        return 0.0
    return float(np.clip(0.5 * (sm - sp) / denom, -0.5, 0.5))


def _track_one(prev: np.ndarray, nxt_padded: np.ndarray, x: float, y: float, cfg: TrackerConfig):
    """Return the new (x, y) in the next frame, or None when the track is lost."""
    p, s = cfg.patch, cfg.search
    h, w = prev.shape
    xi, yi = int(np.floor(x + 0.5)), int(np.floor(y + 0.5))
    if xi - p < 0 or yi - p < 0 or xi + p > w - 1 or yi + p > h - 1:
        return None
    tmpl = prev[yi - p : yi + p + 1, xi - p : xi + p + 1]
    pad = p + s
    region = nxt_padded[yi + pad - p - s : yi + pad + p + s + 1, xi + pad - p - s : xi + pad + p + s + 1]
    windows = sliding_window_view(region, tmpl.shape)
    ssd = np.sum((windows - tmpl) ** 2, axis=(2, 3))  # NaN where the patch leaves the image
    if np.all(np.isnan(ssd)):
        return None
    best = np.nanmin(ssd)
    dys, dxs = np.nonzero(ssd == best)
    # prefer the smallest displacement among exact ties (flat patches)
    k = int(np.argmin((dys - s) ** 2 + (dxs - s) ** 2))
    by, bx = int(dys[k]), int(dxs[k])
    if best / tmpl.size > cfg.ssd_threshold:
        return None
    sub_x = sub_y = 0.0
    if best > 0.0:
        if 0 < bx < 2 * s:
            sub_x = _parabola_offset(ssd[by, bx - 1], best, ssd[by, bx + 1])
        if 0 < by < 2 * s:
            sub_y = _parabola_offset(ssd[by - 1, bx], best, ssd[by + 1, bx])
    nx = x + (bx - s) + sub_x
    ny = y + (by - s) + sub_y
    nxi, nyi = int(np.floor(nx + 0.5)), int(np.floor(ny + 0.5))
    if nxi - p < 0 or nyi - p < 0 or nxi + p > w - 1 or nyi + p > h - 1:
        return None
    return nx, ny


def track_sequence(
    frames: Sequence[Raster8],
    cfg: TrackerConfig | None = None,
    frame_ids: Sequence[int] | None = None,
) -> TrackSet:
    """Detect gradient corners and follow them frame to frame by SSD search."""
    cfg = cfg or TrackerConfig()
    if not frames:
        raise ValueError("no frames to track")
    shape = frames[0].data.shape
    if any(f.data.shape != shape for f in frames):
        raise ValueError("frames have mismatched dimensions")
    if frame_ids is None:
        frame_ids = list(range(len(frames)))
    if len(frame_ids) != len(frames):
        raise ValueError("frame_ids and frames differ in length")

    imgs = [f.data.astype(np.float64) for f in frames]
    pad = cfg.patch + cfg.search
    positions: dict[int, list[tuple[int, float, float]]] = {}
    live: dict[int, tuple[float, float]] = {}
    next_id = 0
    for x, y in _detect(imgs[0], cfg, []):
        positions[next_id] = [(frame_ids[0], x, y)]
        live[next_id] = (x, y)
        next_id += 1
    floor = cfg.reseed_floor * max(len(live), 1)

    for i in range(1, len(imgs)):
        padded = np.pad(imgs[i], pad, mode="constant", constant_values=np.nan)
        survivors: dict[int, tuple[float, float]] = {}
        for pid in sorted(live):
            moved = _track_one(imgs[i - 1], padded, *live[pid], cfg)
            if moved is not None:
                survivors[pid] = moved
                positions[pid].append((frame_ids[i], *moved))
        live = survivors
        if len(live) < floor:
            for x, y in _detect(imgs[i], cfg, list(live.values())):
                positions[next_id] = [(frame_ids[i], x, y)]
                live[next_id] = (x, y)
                next_id += 1

    index = {fid: k for k, fid in enumerate(frame_ids)}
    out: dict[int, list[Observation]] = {}
    for pid, obs in positions.items():
        if len(obs) < 2:
            continue
        out[pid] = [
            Observation(
                fid,
                x,
                y,
                intensity=sample_bilinear(frames[index[fid]], x, y),
                grad_sq=grad_sq_at(frames[index[fid]], x, y),
            )
            for fid, x, y in obs
        ]
    return TrackSet(out)
