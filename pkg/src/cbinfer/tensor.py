"""Planar float32 frame tensors and label maps.

A frame tensor is a C-contiguous ``numpy.float32`` array of shape
``(channels, height, width)``; element ``(c, j, i)`` lives at flat offset
``c*h*w + j*w + i``. A label map is an integer array of shape
``(height, width)``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import BoundsError, LoadError, ShapeError

DTYPE = np.float32
LABEL_DTYPE = np.int64


def as_frame(data, channels: int | None = None, height: int | None = None,
             width: int | None = None) -> np.ndarray:
    """Return ``data`` as a contiguous float32 (C, H, W) array.

    A flat buffer is reshaped using the given dims; a 3-d array is checked
    against any dims that are given.
    """
    arr = np.ascontiguousarray(data, dtype=DTYPE)
    if arr.ndim == 1:
        if None in (channels, height, width):
            raise ShapeError("flat frame data needs channels, height and width")
        if arr.size != channels * height * width:
            raise ShapeError(
                f"expected {channels * height * width} values, got {arr.size}")
        return arr.reshape(channels, height, width)
    if arr.ndim != 3:
        raise ShapeError(f"frame tensor must be 3-d, got shape {arr.shape}")
    for name, want, got in zip(("channels", "height", "width"),
                               (channels, height, width), arr.shape):
        if want is not None and want != got:
            raise ShapeError(f"{name} mismatch: expected {want}, got {got}")
    return arr


def linear_index(c: int, j: int, i: int, dims: tuple[int, int, int]) -> int:
    channels, height, width = dims
    if not (0 <= c < channels and 0 <= j < height and 0 <= i < width):
        raise BoundsError(f"coordinate {(c, j, i)} outside dims {dims}")
    return (c * height + j) * width + i


def max_abs_diff(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(np.asarray(a, DTYPE) - np.asarray(b, DTYPE))))


def read_raw_frame(path, channels: int, height: int, width: int) -> np.ndarray:
    """Read a little-endian float32 planar frame file."""
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != channels * height * width:
        raise LoadError(
            f"{path}: expected {channels * height * width} values, found {raw.size}")
    return as_frame(raw.astype(DTYPE), channels, height, width)


def write_raw_frame(path, frame: np.ndarray) -> None:
    np.ascontiguousarray(frame, dtype="<f4").tofile(path)


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 PPM (8-bit) into a 3-channel frame scaled to [0, 1]."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    # header: magic, width, height, maxval separated by whitespace/comments
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise LoadError(f"{path}: truncated PPM header")
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P6":
        raise LoadError(f"{path}: not a binary PPM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise LoadError(f"{path}: only 8-bit PPM supported (maxval {maxval})")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height * 3, offset=pos)
    planar = pixels.reshape(height, width, 3).transpose(2, 0, 1)
    return np.ascontiguousarray(planar, dtype=DTYPE) / DTYPE(255)


def write_labels(path, labels: np.ndarray) -> None:
    np.ascontiguousarray(labels, dtype=np.uint8).tofile(path)


def read_labels(path, height: int, width: int) -> np.ndarray:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size != height * width:
        raise LoadError(f"{path}: expected {height * width} labels, found {raw.size}")
    return raw.reshape(height, width).astype(LABEL_DTYPE)
