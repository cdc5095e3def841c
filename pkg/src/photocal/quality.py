"""Gray-level information entropy of 8-bit images."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .raster import Raster8


def entropy(img: Raster8) -> float:
    """Shannon entropy of the 256-bin histogram in bits, within [0, 8]."""
    counts = np.bincount(img.data.ravel(), minlength=256)
    p = counts[counts > 0] / counts.sum()
    h = float(-np.sum(p * np.log2(p)))
    return h + 0.0  # turn -0.0 into 0.0 for a single-valued image


def sequence_entropy(frames: Sequence[Raster8]) -> tuple[list[float], float]:
    """Per-frame entropies and their arithmetic mean."""
    if len(frames) == 0:
        raise ValueError("no frames given")
    values = [entropy(f) for f in frames]
    return values, float(np.mean(values))
