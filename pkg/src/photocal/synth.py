"""Deterministic synthetic sequences with known photometric ground truth.

A smooth random radiance field is viewed through a window that translates
by `path` pixels per frame (offsets rounded half away from zero to whole
pixels, so scene anchors always land on pixel centers). Each pixel is
rendered as f(e_i * V(r) * L), quantized, optionally perturbed by Gaussian
noise and re-quantized.

Random numbers come from SplitMix64 (Steele, Lea & Flood) so any
reimplementation can reproduce a sequence bit for bit:

    state += 0x9E3779B97F4A7C15
    z = (state ^ (state >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    out = z ^ (z >> 31)                      (all arithmetic mod 2**64)

uniform = (out >> 11) * 2**-53. Normals use Box-Muller on consecutive
uniform pairs (u1, u2): sqrt(-2 ln(1 - u1)) * (cos(2 pi u2), sin(2 pi u2)).
Draw order: texture grid (row-major), per-frame exposures, anchor
candidates (x then y), then per-frame noise (row-major) when sigma > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import CalibRecord, SequenceMeta, geometric_mean
from .raster import Raster8, round_half_away
from .response import ResponseParams, is_monotone, response_eval
from .tracking import Observation, TrackSet, grad_sq_at
from .vignette import RadiusMap, VignetteParams, v_normalized

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) % 2**64

    def next_u64(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * _GAMMA
            z = (z ^ (z >> np.uint64(30))) * _M1
            z = (z ^ (z >> np.uint64(27))) * _M2
        self.state = (self.state + n * 0x9E3779B97F4A7C15) % 2**64
        return z ^ (z >> np.uint64(31))

    def uniform(self, n: int) -> np.ndarray:
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        m = (n + 1) // 2
        u = self.uniform(2 * m).reshape(m, 2)
        rad = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        ang = 2.0 * np.pi * u[:, 1]
        return np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1).reshape(-1)[:n]


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 1
    frames: int = 200
    width: int = 128
    height: int = 128
    texture_cells: int = 16
    radiance_range: tuple[float, float] = (0.25, 0.75)
    path: tuple[float, float] = (0.4, 0.25)  # pixels per frame
    true_c: tuple[float, float, float, float] = (0.3, -0.2, 0.1, 0.05)
    true_v: tuple[float, float, float] = (-0.3, -0.1, -0.05)
    exposure_range: tuple[float, float] = (0.5, 2.0)
    exposure_base_ms: float = 10.0  # ms value of relative exposure 1.0 before gauge fixing
    noise_sigma: float = 0.0  # intensity levels
    n_points: int = 500
    frame_interval: float = 0.05  # seconds
    field_size: tuple[int, int] | None = None  # (width, height); None = just large enough

    def __post_init__(self):
        lo, hi = self.radiance_range
        if not 0 < lo < hi < 1:
            raise ValueError("radiance_range must satisfy 0 < lo < hi < 1")
        elo, ehi = self.exposure_range
        if not 0 < elo <= ehi:
            raise ValueError("exposure_range must be positive and ordered")
        if not is_monotone(self.true_c):
            raise ValueError("true_c gives a non-monotone response")
        VignetteParams(self.true_v)
        if self.frames < 2 or self.width < 4 or self.height < 4:
            raise ValueError("need at least 2 frames of at least 4x4 pixels")
        if self.texture_cells < 1 or self.n_points < 0 or self.noise_sigma < 0:
            raise ValueError("invalid texture_cells / n_points / noise_sigma")


@dataclass(eq=False)
class SynthSequence:
    spec: SynthSpec
    frames: list[Raster8]
    metas: list[SequenceMeta]
    truth: CalibRecord
    tracks: TrackSet
    radiance_field: np.ndarray  # (field_h, field_w) scene radiance
    offsets: np.ndarray  # (frames, 2) integer window offsets (x, y)
    point_radiance: dict[int, float] = field(default_factory=dict)

    @property
    def frame_ids(self) -> list[int]:
        return [m.frame_id for m in self.metas]


def render_pixel(f: ResponseParams, V, e, L):
    """round(clamp(f(clamp(e V L, 0, 1)), 0, 255)), rounding half away from zero."""
    x = np.clip(np.asarray(e, dtype=np.float64) * V * L, 0.0, 1.0)
    out = round_half_away(np.clip(response_eval(f, x), 0.0, 255.0))
    return float(out) if np.ndim(out) == 0 else out


def _upsample(grid: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear upsampling of a (n+1, n+1) node grid to (out_h, out_w) pixels."""
    n = grid.shape[0] - 1
    gx = np.linspace(0.0, n, out_w)
    gy = np.linspace(0.0, n, out_h)
    x0 = np.minimum(np.floor(gx).astype(int), n - 1)
    y0 = np.minimum(np.floor(gy).astype(int), n - 1)
    fx = (gx - x0)[None, :]
    fy = (gy - y0)[:, None]
    g00 = grid[np.ix_(y0, x0)]
    g01 = grid[np.ix_(y0, x0 + 1)]
    g10 = grid[np.ix_(y0 + 1, x0)]
    g11 = grid[np.ix_(y0 + 1, x0 + 1)]
    return (1 - fy) * ((1 - fx) * g00 + fx * g01) + fy * ((1 - fx) * g10 + fx * g11)


def window_offsets(spec: SynthSpec) -> np.ndarray:
    i = np.arange(spec.frames, dtype=np.float64)[:, None]
    raw = round_half_away(i * np.asarray(spec.path, dtype=np.float64)[None, :]).astype(np.int64)
    return raw - raw.min(axis=0)


def generate(spec: SynthSpec | None = None) -> SynthSequence:
    spec = spec or SynthSpec()
    rng = SplitMix64(spec.seed)
    offsets = window_offsets(spec)
    need_w = spec.width + int(offsets[:, 0].max())
    need_h = spec.height + int(offsets[:, 1].max())
    if spec.field_size is None:
        field_w, field_h = need_w, need_h
    else:
        field_w, field_h = spec.field_size
        if field_w < need_w or field_h < need_h:
            raise ValueError(
                f"path needs a {need_w}x{need_h} radiance field, only {field_w}x{field_h} available"
            )

    lo, hi = spec.radiance_range
    n = spec.texture_cells
    grid = lo + (hi - lo) * rng.uniform((n + 1) * (n + 1)).reshape(n + 1, n + 1)
    radiance = _upsample(grid, field_w, field_h)

    elo, ehi = spec.exposure_range
    raw_e = elo * (ehi / elo) ** rng.uniform(spec.frames)
    exposures = raw_e / geometric_mean(raw_e)
    # exact unit geometric mean can be off by an ulp; one more pass settles it
    exposures = exposures / geometric_mean(exposures)

    response = ResponseParams(spec.true_c)
    vignette = VignetteParams(spec.true_v)
    rmap = RadiusMap(spec.width, spec.height)
    V = v_normalized(vignette.v, rmap.grid())

    anchors = _draw_anchors(rng, spec, offsets, field_w, field_h)

    frames: list[Raster8] = []
    for i in range(spec.frames):
        ox, oy = offsets[i]
        L = radiance[oy : oy + spec.height, ox : ox + spec.width]
        clean = render_pixel(response, V, exposures[i], L)
        if spec.noise_sigma > 0:
            noise = spec.noise_sigma * rng.normal(spec.width * spec.height).reshape(spec.height, spec.width)
            clean = round_half_away(np.clip(clean + noise, 0.0, 255.0))
        frames.append(Raster8(clean.astype(np.uint8)))

    metas = [
        SequenceMeta(i, round(i * spec.frame_interval, 9), float(spec.exposure_base_ms * raw_e[i]))
        for i in range(spec.frames)
    ]
    frame_ids = tuple(range(spec.frames))
    truth = CalibRecord(spec.true_c, spec.true_v, tuple(exposures), frame_ids)

    anchor_xy = np.asarray(anchors, dtype=np.int64).reshape(-1, 2)
    obs_of: list[list[Observation]] = [[] for _ in anchors]
    for i in range(spec.frames):
        xs = anchor_xy[:, 0] - offsets[i, 0]
        ys = anchor_xy[:, 1] - offsets[i, 1]
        vis = np.nonzero((xs >= 1) & (xs <= spec.width - 2) & (ys >= 1) & (ys <= spec.height - 2))[0]
        if len(vis) == 0:
            continue
        img = frames[i]
        g = np.atleast_1d(grad_sq_at(img, xs[vis].astype(np.float64), ys[vis].astype(np.float64)))
        vals = img.data[ys[vis], xs[vis]]
        for k, pid in enumerate(vis):
            obs_of[pid].append(Observation(i, float(xs[pid]), float(ys[pid]), float(vals[k]), float(g[k])))
    tracks = {pid: obs for pid, obs in enumerate(obs_of)}
    point_radiance = {pid: float(radiance[ay, ax]) for pid, (ax, ay) in enumerate(anchors)}

    return SynthSequence(spec, frames, metas, truth, TrackSet(tracks), radiance, offsets, point_radiance)


def _draw_anchors(rng: SplitMix64, spec: SynthSpec, offsets: np.ndarray, field_w: int, field_h: int):
    """Distinct integer field positions visible (1-px margin) in at least two frames."""
    anchors: list[tuple[int, int]] = []
    taken: set[tuple[int, int]] = set()
    batch = max(64, 2 * spec.n_points)
    attempts = 0
    while len(anchors) < spec.n_points:
        attempts += batch
        if attempts > 1000 * max(spec.n_points, 1):
            raise ValueError("could not place the requested number of track anchors")
        u = rng.uniform(2 * batch).reshape(batch, 2)
        for ux, uy in u:
            ax = int(math.floor(ux * field_w))
            ay = int(math.floor(uy * field_h))
            if (ax, ay) in taken:
                continue
            xs = ax - offsets[:, 0]
            ys = ay - offsets[:, 1]
            visible = (xs >= 1) & (xs <= spec.width - 2) & (ys >= 1) & (ys <= spec.height - 2)
            if np.count_nonzero(visible) < 2:
                continue
            anchors.append((ax, ay))
            taken.add((ax, ay))
            if len(anchors) == spec.n_points:
                break
    return anchors


def true_state_radiances(seq: SynthSequence, point_ids: Sequence[int]) -> np.ndarray:
    return np.array([seq.point_radiance[p] for p in point_ids])
