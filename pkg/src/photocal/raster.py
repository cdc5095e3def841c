"""Grayscale raster containers and binary PGM (P5) I/O."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    """A file on disk does not follow the expected layout."""


def round_half_away(x):
    """Round half away from zero (the rounding convention used everywhere here)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True, eq=False)
class Raster8:
    data: np.ndarray  # (height, width) uint8, row-major

    def __post_init__(self):
        data = np.ascontiguousarray(self.data)
        if data.ndim != 2:
            raise ValueError(f"raster must be 2-D, got shape {data.shape}")
        if data.dtype != np.uint8:
            raise ValueError(f"Raster8 needs uint8 data, got {data.dtype}")
        if data.shape[0] < 2 or data.shape[1] < 2:
            raise ValueError(f"raster must be at least 2x2, got {data.shape[1]}x{data.shape[0]}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other):
        return isinstance(other, Raster8) and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class Raster16:
    data: np.ndarray  # (height, width) uint16, row-major

    def __post_init__(self):
        data = np.ascontiguousarray(self.data)
        if data.ndim != 2 or data.size == 0:
            raise ValueError(f"raster must be 2-D and non-empty, got shape {data.shape}")
        if data.dtype != np.uint16:
            raise ValueError(f"Raster16 needs uint16 data, got {data.dtype}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other):
        return isinstance(other, Raster16) and np.array_equal(self.data, other.data)


def _header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read `count` whitespace-separated header tokens, skipping '#' comments.

    Returns the tokens and the offset of the single whitespace byte that
    terminates the last one.
    """
    tokens: list[bytes] = []
    i = 0
    n = len(buf)
    while len(tokens) < count:
        while i < n and buf[i : i + 1].isspace():
            i += 1
        if i < n and buf[i : i + 1] == b"#":
            while i < n and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not buf[i : i + 1].isspace() and buf[i : i + 1] != b"#":
            i += 1
        if start == i:
            raise FormatError("truncated PGM header")
        tokens.append(buf[start:i])
    if i >= n or not buf[i : i + 1].isspace():
        raise FormatError("PGM header must end with a single whitespace byte")
    return tokens, i


def read_pgm(path: str | os.PathLike) -> Raster8 | Raster16:
    buf = Path(path).read_bytes()
    tokens, end = _header_tokens(buf, 4)
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: non-integer PGM header field") from None
    payload = buf[end + 1 :]
    if maxval == 255:
        dtype = np.dtype(np.uint8)
    elif maxval == 65535:
        dtype = np.dtype(">u2")
    else:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    expected = width * height * dtype.itemsize
    if len(payload) < expected:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    data = np.frombuffer(payload[:expected], dtype=dtype).reshape(height, width)
    if maxval == 255:
        return Raster8(data.copy())
    return Raster16(data.astype(np.uint16))


def write_pgm(img: Raster8 | Raster16, path: str | os.PathLike) -> None:
    if isinstance(img, Raster8):
        maxval, payload = 255, img.data.tobytes()
    elif isinstance(img, Raster16):
        maxval, payload = 65535, img.data.astype(">u2").tobytes()
    else:
        raise TypeError(f"cannot write {type(img).__name__} as PGM")
    header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + payload)


def write_raster16_pgm(img: Raster16, path: str | os.PathLike) -> None:
    """Write a 16-bit PGM (maxval 65535, big-endian samples)."""
    if not isinstance(img, Raster16):
        raise TypeError("write_raster16_pgm expects a Raster16")
    write_pgm(img, path)
