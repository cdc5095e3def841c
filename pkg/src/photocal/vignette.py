"""Radially symmetric vignetting V(r) = 1 + v1 r^2 + v2 r^4 + v3 r^6."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

N_COEFFS = 3
MIN_ATTENUATION = 1e-3
POSITIVITY_GRID = np.linspace(0.0, 1.0, 256)


class NonPositiveVignette(ValueError):
    pass


def v_normalized(v, r):
    r2 = np.asarray(r, dtype=np.float64) ** 2
    v1, v2, v3 = (float(a) for a in v)
    return 1.0 + r2 * (v1 + r2 * (v2 + r2 * v3))


def is_positive(v) -> bool:
    return bool(np.min(v_normalized(v, POSITIVITY_GRID)) >= MIN_ATTENUATION)


@dataclass(frozen=True)
class VignetteParams:
    v: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        v = tuple(float(a) for a in self.v)
        if len(v) != N_COEFFS:
            raise ValueError(f"vignette needs {N_COEFFS} coefficients, got {len(v)}")
        if not all(np.isfinite(v)):
            raise ValueError("vignette coefficients must be finite")
        if not is_positive(v):
            raise NonPositiveVignette(f"vignette with v={v} drops below {MIN_ATTENUATION} on [0, 1]")
        object.__setattr__(self, "v", v)


def _check_radius(r):
    r = np.asarray(r, dtype=np.float64)
    if np.any(~np.isfinite(r)) or np.any(r < 0.0) or np.any(r > 1.0):
        raise ValueError("normalized radius must lie in [0, 1]")
    return r


def vignette_eval(params: VignetteParams, r):
    out = v_normalized(params.v, _check_radius(r))
    return float(out) if np.ndim(out) == 0 else out


def vignette_jacobian(r):
    """dV/dv = (r^2, r^4, r^6), shape (..., 3)."""
    r2 = _check_radius(r) ** 2
    out = np.stack([r2, r2**2, r2**3], axis=-1)
    return out


@dataclass(frozen=True)
class RadiusMap:
    width: int
    height: int
    center: tuple[float, float] | None = None

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("radius map needs positive dimensions")
        if self.center is None:
            object.__setattr__(self, "center", ((self.width - 1) / 2.0, (self.height - 1) / 2.0))
        else:
            object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if self.max_radius <= 0.0:
            raise ValueError("radius map is degenerate (single pixel at the center)")

    @property
    def max_radius(self) -> float:
        cx, cy = self.center
        corners = [(0, 0), (self.width - 1, 0), (0, self.height - 1), (self.width - 1, self.height - 1)]
        return max(math.hypot(x - cx, y - cy) for x, y in corners)

    def grid(self) -> np.ndarray:
        """Normalized radius of every integer pixel, shape (height, width)."""
        cx, cy = self.center
        ys, xs = np.mgrid[0 : self.height, 0 : self.width]
        return np.hypot(xs - cx, ys - cy) / self.max_radius


def radius_of(rmap: RadiusMap, x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    # any point on a pixel's area counts, so edges reach half a pixel past the outer centers
    if np.any(x < -0.5) or np.any(y < -0.5) or np.any(x > rmap.width - 0.5) or np.any(y > rmap.height - 0.5):
        raise ValueError("coordinate outside the image")
    cx, cy = rmap.center
    # max_radius is measured to the outermost pixel centers; clip the half pixel beyond
    out = np.minimum(np.hypot(x - cx, y - cy) / rmap.max_radius, 1.0)
    return float(out) if out.ndim == 0 else out


def attenuation_map(params: VignetteParams, rmap: RadiusMap) -> np.ndarray:
    """V at every pixel, for export as a 16-bit image."""
    return v_normalized(params.v, rmap.grid())
