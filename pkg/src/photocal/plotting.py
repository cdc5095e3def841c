"""Report figures rendered straight to PNG files (no display needed)."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence

import numpy as np
from matplotlib.figure import Figure

from .calib import IterationLog
from .dataset import CalibRecord
from .evaluation import Heatmap
from .response import ResponseParams, response_eval
from .vignette import v_normalized

STYLE = {"figsize": (5.0, 3.4), "dpi": 120}
# no version/software stamp so reruns produce identical bytes
PNG_META = {"Software": None}


def _save(fig: Figure, path: str | os.PathLike) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=PNG_META)
    return path


def plot_response(record: CalibRecord, path, truth: CalibRecord | None = None) -> Path:
    x = np.linspace(0.0, 1.0, 256)
    fig = Figure(**STYLE)
    ax = fig.add_subplot()
    ax.plot(x, response_eval(ResponseParams(record.c), x), label="estimated")
    if truth is not None:
        ax.plot(x, response_eval(ResponseParams(truth.c), x), "--", label="true")
        ax.legend(frameon=False)
    ax.set_xlabel("irradiance x exposure (normalized)")
    ax.set_ylabel("intensity")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 255)
    return _save(fig, path)


def plot_vignette(record: CalibRecord, path, truth: CalibRecord | None = None) -> Path:
    r = np.linspace(0.0, 1.0, 256)
    fig = Figure(**STYLE)
    ax = fig.add_subplot()
    ax.plot(r, v_normalized(record.v, r), label="estimated")
    if truth is not None:
        ax.plot(r, v_normalized(truth.v, r), "--", label="true")
        ax.legend(frameon=False)
    ax.set_xlabel("normalized radius")
    ax.set_ylabel("attenuation V(r)")
    ax.set_xlim(0, 1)
    return _save(fig, path)


def plot_exposures(record: CalibRecord, path, truth: CalibRecord | None = None) -> Path:
    fig = Figure(**STYLE)
    ax = fig.add_subplot()
    ax.plot(record.frame_ids, record.exposures, lw=1, label="estimated")
    if truth is not None:
        ax.plot(truth.frame_ids, truth.exposures, "--", lw=1, label="true")
        ax.legend(frameon=False)
    ax.set_xlabel("frame")
    ax.set_ylabel("relative exposure")
    return _save(fig, path)


def plot_energy(history: Sequence[IterationLog], path) -> Path:
    it = np.array([h.iteration for h in history])
    en = np.array([h.energy for h in history])
    acc = np.array([h.accepted for h in history])
    fig = Figure(**STYLE)
    ax = fig.add_subplot()
    ax.semilogy(it, en, "-", color="0.5", lw=1)
    ax.semilogy(it[acc], en[acc], "o", ms=3, label="accepted")
    if np.any(~acc):
        ax.semilogy(it[~acc], en[~acc], "x", ms=4, label="rejected")
    ax.legend(frameon=False)
    ax.set_xlabel("iteration")
    ax.set_ylabel("weighted energy")
    return _save(fig, path)


def plot_heatmap(hm: Heatmap, path) -> Path:
    x0, x1, y0, y1 = hm.extent
    fig = Figure(**STYLE)
    ax = fig.add_subplot()
    im = ax.imshow(
        np.ma.masked_invalid(hm.mean_error), origin="lower", extent=(x0, x1, y0, y1), aspect="auto", cmap="viridis"
    )
    fig.colorbar(im, ax=ax, label="mean error (m)")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    return _save(fig, path)
