"""Raster frame containers and binary PGM (P5) input/output.

Depth frames are 16-bit millimeters (0 = invalid sample, maxval 65535,
big-endian samples per the Netpbm convention); gray and IR frames are plain
8-bit (maxval 255).  Pixel data is row-major, one array element per pixel.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


def _check_frame(width: int, height: int, pixels: np.ndarray, timestamp_us: int) -> None:
    if pixels.shape != (height, width):
        raise ValueError(f"pixel array shape {pixels.shape} does not match {height}x{width}")
    if timestamp_us < 0:
        raise ValueError(f"timestamp must be non-negative, got {timestamp_us}")


@dataclass
class DepthFrame:
    """16-bit depth raster in millimeters; 0 marks an invalid sample."""

    width: int
    height: int
    depth_mm: np.ndarray
    timestamp_us: int = 0

    def __post_init__(self) -> None:
        self.depth_mm = np.ascontiguousarray(self.depth_mm, dtype=np.uint16)
        _check_frame(self.width, self.height, self.depth_mm, self.timestamp_us)

    @property
    def valid_mask(self) -> np.ndarray:
        return self.depth_mm > 0


@dataclass
class GrayFrame:
    """8-bit grayscale raster."""

    width: int
    height: int
    pixels: np.ndarray
    timestamp_us: int = 0

    def __post_init__(self) -> None:
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        _check_frame(self.width, self.height, self.pixels, self.timestamp_us)


@dataclass
class IrFrame:
    """8-bit infrared intensity raster."""

    width: int
    height: int
    intensity: np.ndarray
    timestamp_us: int = 0

    def __post_init__(self) -> None:
        self.intensity = np.ascontiguousarray(self.intensity, dtype=np.uint8)
        _check_frame(self.width, self.height, self.intensity, self.timestamp_us)


def write_pgm(path: str | Path, pixels: np.ndarray) -> None:
    """Write a 2D uint8 or uint16 array as binary PGM (P5).

    16-bit samples are stored big-endian with maxval 65535.
    """
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise ValueError(f"expected a 2D array, got shape {pixels.shape}")
    if pixels.dtype == np.uint8:
        maxval = 255
        payload = pixels.tobytes()
    elif pixels.dtype == np.uint16:
        maxval = 65535
        payload = pixels.astype(">u2").tobytes()
    else:
        raise ValueError(f"unsupported dtype {pixels.dtype}, expected uint8 or uint16")
    height, width = pixels.shape
    header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + payload)


def _read_pgm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Parse `count` whitespace/comment-separated integers; return (values, offset)."""
    values: list[int] = []
    i = 0
    while len(values) < count:
        if i >= len(data):
            raise ValueError("truncated PGM header")
        c = data[i : i + 1]
        if c == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace() and data[j : j + 1] != b"#":
                j += 1
            values.append(int(data[i:j]))
            i = j
    return values, i + 1  # single whitespace byte terminates the header


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary PGM into a uint8 (maxval <= 255) or uint16 array."""
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (missing P5 magic)")
    (width, height, maxval), offset = _read_pgm_tokens(data[2:], 3)
    offset += 2
    if width <= 0 or height <= 0:
        raise ValueError(f"{path}: bad dimensions {width}x{height}")
    n = width * height
    if maxval <= 0 or maxval > 65535:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    if maxval <= 255:
        raw = np.frombuffer(data, dtype=np.uint8, count=n, offset=offset)
        return raw.reshape(height, width).copy()
    raw = np.frombuffer(data, dtype=">u2", count=n, offset=offset)
    return raw.astype(np.uint16).reshape(height, width)


def read_depth(path: str | Path, timestamp_us: int = 0) -> DepthFrame:
    pixels = read_pgm(path)
    if pixels.dtype != np.uint16:
        raise ValueError(f"{path}: depth frames must be 16-bit PGM")
    return DepthFrame(pixels.shape[1], pixels.shape[0], pixels, timestamp_us)


def read_gray(path: str | Path, timestamp_us: int = 0) -> GrayFrame:
    pixels = read_pgm(path)
    if pixels.dtype != np.uint8:
        raise ValueError(f"{path}: gray frames must be 8-bit PGM")
    return GrayFrame(pixels.shape[1], pixels.shape[0], pixels, timestamp_us)


def read_ir(path: str | Path, timestamp_us: int = 0) -> IrFrame:
    pixels = read_pgm(path)
    if pixels.dtype != np.uint8:
        raise ValueError(f"{path}: IR frames must be 8-bit PGM")
    return IrFrame(pixels.shape[1], pixels.shape[0], pixels, timestamp_us)
