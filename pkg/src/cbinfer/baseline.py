"""Full-frame reference layers.

Everything here evaluates the whole frame. ``conv_full`` is a direct
evaluation of the convolution sum and ``im2col_full`` + ``gemm`` is the
matrix formulation; both accumulate every output element as

    bias, then + K[o, r] * X[r, n] for r = 0, 1, ..., R-1

in float32, so the two paths (and the change-based path built on ``gemm``)
agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GeometryError, LoadError, ShapeError
from .tensor import DTYPE, LABEL_DTYPE

# columns per GEMM block; keeps the accumulator block cache resident
GEMM_BLOCK = 2048


@dataclass(frozen=True)
class ConvGeometry:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride_h: int = 1
    stride_w: int = 1
    pad_h: int = 0
    pad_w: int = 0

    @classmethod
    def same(cls, in_channels: int, out_channels: int, kernel: int, stride: int = 1):
        """Square kernel with ``(k-1)/2`` zero padding."""
        return cls(in_channels, out_channels, kernel, kernel, stride, stride,
                   (kernel - 1) // 2, (kernel - 1) // 2)

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel_h, self.kernel_w,
               self.stride_h, self.stride_w) < 1 or min(self.pad_h, self.pad_w) < 0:
            raise GeometryError(f"invalid geometry {self}")

    @property
    def patch_size(self) -> int:
        """Rows of the patch matrix: in_channels * kernel_h * kernel_w."""
        return self.in_channels * self.kernel_h * self.kernel_w

    def output_size(self, height: int, width: int) -> tuple[int, int]:
        ho = (height + 2 * self.pad_h - self.kernel_h) // self.stride_h + 1
        wo = (width + 2 * self.pad_w - self.kernel_w) // self.stride_w + 1
        if ho < 1 or wo < 1:
            raise GeometryError(
                f"{self.kernel_h}x{self.kernel_w} kernel on {height}x{width} "
                f"input gives empty output")
        return ho, wo

    def macs(self, height: int, width: int) -> int:
        """Multiply-accumulates of a full-frame evaluation on an input grid."""
        ho, wo = self.output_size(height, width)
        return self.out_channels * self.patch_size * ho * wo


@dataclass
class FilterMatrix:
    """Filter bank in matrix form: ``weights[o, (c*kh + j)*kw + i] = k(o, c, j, i)``."""

    weights: np.ndarray  # (out_channels, patch_size)
    bias: np.ndarray     # (out_channels,)

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=DTYPE)
        self.bias = np.ascontiguousarray(self.bias, dtype=DTYPE).reshape(-1)
        if self.weights.ndim != 2 or self.bias.shape[0] != self.weights.shape[0]:
            raise ShapeError(
                f"weights {self.weights.shape} and bias {self.bias.shape} disagree")

    @classmethod
    def from_kernel(cls, kernel: np.ndarray, bias=None) -> FilterMatrix:
        """Build from a ``(out, in, kh, kw)`` kernel array."""
        kernel = np.asarray(kernel, dtype=DTYPE)
        if kernel.ndim != 4:
            raise ShapeError(f"kernel must be 4-d, got {kernel.shape}")
        if bias is None:
            bias = np.zeros(kernel.shape[0], dtype=DTYPE)
        return cls(kernel.reshape(kernel.shape[0], -1), bias)

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def cols(self) -> int:
        return self.weights.shape[1]

    def kernel(self, geom: ConvGeometry) -> np.ndarray:
        return self.weights.reshape(geom.out_channels, geom.in_channels,
                                    geom.kernel_h, geom.kernel_w)

    def check(self, geom: ConvGeometry) -> None:
        if (self.rows, self.cols) != (geom.out_channels, geom.patch_size):
            raise ShapeError(
                f"filter matrix {self.rows}x{self.cols} does not fit geometry "
                f"({geom.out_channels}x{geom.patch_size})")


def weight_count(geom: ConvGeometry) -> int:
    """Values in a weights file: kernel plus bias."""
    return geom.out_channels * geom.patch_size + geom.out_channels


def read_weights(path, geom: ConvGeometry) -> FilterMatrix:
    """Load ``k(o,c,j,i)`` (o outermost) followed by the biases, float32 LE."""
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"weights file {path} not found")
    raw = np.fromfile(path, dtype="<f4")
    want = weight_count(geom)
    if raw.size != want:
        raise LoadError(f"{path}: expected {want} values, found {raw.size}")
    nk = geom.out_channels * geom.patch_size
    return FilterMatrix(raw[:nk].reshape(geom.out_channels, geom.patch_size),
                        raw[nk:])


def write_weights(path, filters: FilterMatrix) -> None:
    np.concatenate([filters.weights.ravel(), filters.bias]).astype("<f4").tofile(path)


def _check_input(x: np.ndarray, geom: ConvGeometry) -> tuple[int, int]:
    if x.ndim != 3 or x.shape[0] != geom.in_channels:
        raise ShapeError(
            f"input of shape {x.shape} does not have {geom.in_channels} channels")
    return geom.output_size(x.shape[1], x.shape[2])


def pad_input(x: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    if geom.pad_h == 0 and geom.pad_w == 0:
        return np.asarray(x, dtype=DTYPE)
    return np.pad(np.asarray(x, dtype=DTYPE),
                  ((0, 0), (geom.pad_h, geom.pad_h), (geom.pad_w, geom.pad_w)))


def _window(xpad: np.ndarray, c: int, j: int, i: int, geom: ConvGeometry,
            ho: int, wo: int) -> np.ndarray:
    # input samples seen by kernel tap (j, i) of channel c, one per output pixel
    return xpad[c,
                j:j + geom.stride_h * (ho - 1) + 1:geom.stride_h,
                i:i + geom.stride_w * (wo - 1) + 1:geom.stride_w]


def im2col_full(x: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    """Patch matrix with one column per output pixel.

    Row ``(c*kh + j)*kw + i``, column ``yo*wo + xo`` holds the zero-padded
    input sample ``x[c, yo*sh - ph + j, xo*sw - pw + i]``. Strided layers
    simply never build the columns of skipped positions.
    """
    ho, wo = _check_input(x, geom)
    xpad = pad_input(x, geom)
    out = np.empty((geom.patch_size, ho * wo), dtype=DTYPE)
    r = 0
    for c in range(geom.in_channels):
        for j in range(geom.kernel_h):
            for i in range(geom.kernel_w):
                out[r] = _window(xpad, c, j, i, geom, ho, wo).reshape(-1)
                r += 1
    return out


def gemm(filters: FilterMatrix, x: np.ndarray, block: int = GEMM_BLOCK) -> np.ndarray:
    """``Y = bias + K X`` with each element summed in ascending row order of X.

    Columns are processed in blocks of ``block``; the per-element reduction
    order does not depend on the block size or on the number of columns.
    """
    w, b = filters.weights, filters.bias
    if x.ndim != 2 or w.shape[1] != x.shape[0]:
        raise ShapeError(f"cannot multiply {w.shape} filter matrix by {x.shape}")
    rows, depth = w.shape
    n = x.shape[1]
    y = np.empty((rows, n), dtype=DTYPE)
    if n == 0:
        return y
    width = min(block, n)
    acc = np.empty((rows, width), dtype=DTYPE)
    prod = np.empty((rows, width), dtype=DTYPE)
    wcols = [w[:, r:r + 1] for r in range(depth)]
    for start in range(0, n, width):
        stop = min(start + width, n)
        a = acc[:, :stop - start]
        p = prod[:, :stop - start]
        xs = x[:, start:stop]
        a[...] = b[:, None]
        for r in range(depth):
            np.multiply(wcols[r], xs[r], out=p)
            a += p
        y[:, start:stop] = a
    return y


def conv_full(x: np.ndarray, filters: FilterMatrix, geom: ConvGeometry) -> np.ndarray:
    """Direct evaluation of the convolution sum, used as the oracle."""
    ho, wo = _check_input(x, geom)
    filters.check(geom)
    kernel = filters.kernel(geom)
    xpad = pad_input(x, geom)
    out = np.empty((geom.out_channels, ho, wo), dtype=DTYPE)
    out[...] = filters.bias[:, None, None]
    for c in range(geom.in_channels):
        for j in range(geom.kernel_h):
            for i in range(geom.kernel_w):
                tap = kernel[:, c, j, i][:, None, None]
                out += tap * _window(xpad, c, j, i, geom, ho, wo)[None]
    return out


def conv_gemm(x: np.ndarray, filters: FilterMatrix, geom: ConvGeometry) -> np.ndarray:
    """Full-frame convolution through im2col and GEMM."""
    ho, wo = _check_input(x, geom)
    filters.check(geom)
    return gemm(filters, im2col_full(x, geom)).reshape(geom.out_channels, ho, wo)


def relu(t: np.ndarray) -> np.ndarray:
    return np.maximum(t, DTYPE(0))


def maxpool(t: np.ndarray, window: int, stride: int) -> np.ndarray:
    """Per-channel max pooling; windows running past the bottom/right edge are dropped."""
    if window < 1 or stride < 1:
        raise GeometryError(f"invalid pooling window {window} / stride {stride}")
    _, h, w = t.shape
    if window > h or window > w:
        raise GeometryError(f"pool window {window} larger than {h}x{w} input")
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    out = None
    for j in range(window):
        for i in range(window):
            view = t[:, j:j + stride * (ho - 1) + 1:stride,
                     i:i + stride * (wo - 1) + 1:stride]
            out = view.copy() if out is None else np.maximum(out, view)
    return np.ascontiguousarray(out, dtype=DTYPE)


def pool_output_size(height: int, width: int, window: int, stride: int) -> tuple[int, int]:
    if window > height or window > width:
        raise GeometryError(f"pool window {window} larger than {height}x{width} input")
    return (height - window) // stride + 1, (width - window) // stride + 1


def argmax_classify(t: np.ndarray) -> np.ndarray:
    """Per-pixel index of the largest channel; ties go to the lowest index."""
    if t.ndim != 3 or t.shape[0] < 1:
        raise ShapeError(f"cannot classify tensor of shape {t.shape}")
    return np.argmax(t, axis=0).astype(LABEL_DTYPE)
