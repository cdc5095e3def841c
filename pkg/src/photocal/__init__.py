"""Photometric calibration: camera response, vignetting and exposure from tracked points."""

__version__ = "0.1.0"

from .calib import CalibConfig, CalibResult, PhotometricState, calibrate
from .corrector import constancy_score, correct_frame
from .dataset import CalibRecord, load_calib, load_sequence, load_tracks, save_calib
from .evaluation import ate_rmse, improvement_pct, mean_relative_improvement, param_errors
from .quality import entropy, sequence_entropy
from .raster import Raster8, Raster16, read_pgm, write_pgm
from .response import ResponseParams, response_eval, response_invert
from .synth import SynthSpec, generate
from .vignette import RadiusMap, VignetteParams, vignette_eval

__all__ = [
    "CalibConfig",
    "CalibRecord",
    "CalibResult",
    "PhotometricState",
    "RadiusMap",
    "Raster16",
    "Raster8",
    "ResponseParams",
    "SynthSpec",
    "VignetteParams",
    "ate_rmse",
    "calibrate",
    "constancy_score",
    "correct_frame",
    "entropy",
    "generate",
    "improvement_pct",
    "load_calib",
    "load_sequence",
    "load_tracks",
    "mean_relative_improvement",
    "param_errors",
    "read_pgm",
    "response_eval",
    "response_invert",
    "save_calib",
    "sequence_entropy",
    "vignette_eval",
    "write_pgm",
]
