"""Parametric camera response f(x) = 255 * g(x) and its inverse.

g(x) = x + sum_k c_k * (x**(k+1) - x), k = 1..4. Every basis term vanishes
at x = 0 and x = 1, so the endpoints stay pinned at 0 and 255 for any c.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

N_COEFFS = 4
LUT_SIZE = 1025
MONO_GRID = np.linspace(0.0, 1.0, 1024)
MIN_SLOPE = 1e-6


class NonMonotoneResponse(ValueError):
    pass


def _basis(x: np.ndarray) -> np.ndarray:
    """(..., 4) array of x**(k+1) - x."""
    x = np.asarray(x, dtype=np.float64)[..., None]
    powers = np.arange(2, N_COEFFS + 2)
    return x**powers - x


def _basis_deriv(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)[..., None]
    k = np.arange(1, N_COEFFS + 1)
    return (k + 1) * x**k - 1.0


def g_normalized(c, x):
    """Normalized response g(x) in [0, 1]; no range or monotonicity checks."""
    x = np.asarray(x, dtype=np.float64)
    return x + _basis(x) @ np.asarray(c, dtype=np.float64)


def g_slope(c, x):
    """g'(x); f'(x) is 255 times this."""
    return 1.0 + _basis_deriv(x) @ np.asarray(c, dtype=np.float64)


def is_monotone(c) -> bool:
    return bool(np.min(g_slope(c, MONO_GRID)) > 0.0)


@dataclass(frozen=True)
class ResponseParams:
    c: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        c = tuple(float(v) for v in self.c)
        if len(c) != N_COEFFS:
            raise ValueError(f"response needs {N_COEFFS} coefficients, got {len(c)}")
        if not all(np.isfinite(c)):
            raise ValueError("response coefficients must be finite")
        if not is_monotone(c):
            raise NonMonotoneResponse(f"response with c={c} is not strictly increasing on [0, 1]")
        object.__setattr__(self, "c", c)

    @cached_property
    def lut(self) -> InverseLut:
        return InverseLut.build(self.c)


@dataclass(frozen=True, eq=False)
class InverseLut:
    """g^-1 tabulated on a uniform intensity grid over [0, 255]."""

    values: np.ndarray  # (LUT_SIZE,), normalized in [0, 1]
    c: tuple[float, ...] = ()

    @classmethod
    def build(cls, c) -> InverseLut:
        targets = np.linspace(0.0, 1.0, LUT_SIZE)
        lo = np.zeros(LUT_SIZE)
        hi = np.ones(LUT_SIZE)
        # g is strictly increasing, so bisection always brackets the root; 60 halvings reach 1e-18.
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            below = g_normalized(c, mid) < targets
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        values = 0.5 * (lo + hi)
        values[0], values[-1] = 0.0, 1.0
        values = np.maximum.accumulate(values)
        values.setflags(write=False)
        return cls(values, tuple(c))

    def _position(self, intensity):
        return np.asarray(intensity, dtype=np.float64) * ((LUT_SIZE - 1) / 255.0)

    def __call__(self, intensity):
        return np.interp(self._position(intensity), np.arange(LUT_SIZE, dtype=np.float64), self.values)

    @cached_property
    def node_jacobian(self) -> np.ndarray:
        """(LUT_SIZE, 4) dg^-1/dc at every table node, by implicit differentiation."""
        slope = g_slope(self.c, self.values)
        out = -_basis(self.values) / np.maximum(slope, MIN_SLOPE)[:, None]
        out[slope < MIN_SLOPE] = np.nan
        out.setflags(write=False)
        return out

    def jacobian(self, intensity) -> np.ndarray:
        """Derivative of the interpolated table itself, so it matches what __call__ computes."""
        pos = self._position(intensity)
        k = np.minimum(np.floor(pos).astype(np.intp), LUT_SIZE - 2)
        t = (pos - k)[..., None]
        J = self.node_jacobian
        return (1.0 - t) * J[k] + t * J[k + 1]


def _check_unit(x, name):
    x = np.asarray(x, dtype=np.float64)
    if np.any(~np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError(f"{name} must lie in [0, 1]")
    return x


def _check_intensity(intensity):
    i = np.asarray(intensity, dtype=np.float64)
    if np.any(~np.isfinite(i)) or np.any(i < 0.0) or np.any(i > 255.0):
        raise ValueError("intensity must lie in [0, 255]")
    return i


def response_eval(params: ResponseParams, x):
    """f(x) = 255 * g(x) for normalized exposure-irradiance x in [0, 1]."""
    x = _check_unit(x, "x")
    out = 255.0 * g_normalized(params.c, x)
    # pin endpoints exactly against rounding in the polynomial sum
    out = np.where(x == 0.0, 0.0, np.where(x == 1.0, 255.0, out))
    return float(out) if out.ndim == 0 else out


def response_invert(params: ResponseParams, intensity):
    """Normalized f^-1(intensity) in [0, 1] via the cached inverse LUT."""
    i = _check_intensity(intensity)
    out = params.lut(i)
    return float(out) if np.ndim(out) == 0 else out


def response_jacobian(params: ResponseParams, intensity):
    """d f^-1(I) / d c, shape (..., 4).

    At each table node y = f^-1(I) and implicit differentiation of f(y; c) = I
    gives dy/dc_k = -(df/dc_k)(y) / f'(y); between nodes the derivatives are
    interpolated like the table values.
    """
    J = params.lut.jacobian(_check_intensity(intensity))
    if np.any(~np.isfinite(J)):
        raise ValueError("response slope is degenerate at the requested intensity")
    return J


def inverse_response_samples(params: ResponseParams) -> np.ndarray:
    """f^-1 at the 256 integer intensity levels (normalized)."""
    return params.lut(np.arange(256, dtype=np.float64))
