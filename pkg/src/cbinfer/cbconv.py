"""Change-based convolution.

A CB layer keeps its previous input and previous output. For each new frame
it flags input pixels whose value moved by more than the layer threshold in
any channel, grows that mask by the filter support to find the output pixels
that can be affected, lists them, builds the patch matrix for just those
columns, multiplies, and scatters the new values (optionally through ReLU)
into a copy of the previous output.

Change maps are 2-d boolean arrays; index lists are 1-d int64 arrays of
linear output-pixel indices in ascending order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .baseline import ConvGeometry, FilterMatrix, gemm, im2col_full, pad_input, relu
from .errors import BoundsError, ShapeError
from .tensor import DTYPE

# pixels per block in index extraction (a 16x16 tile worth of pixels)
EXTRACT_BLOCK = 256

STEPS = ("detect", "extract", "gen_x", "gemm", "update")


@dataclass
class LayerStats:
    changed_input_pixels: int = 0
    changed_output_pixels: int = 0
    gemm_macs: int = 0
    step_nanos: dict = field(default_factory=lambda: dict.fromkeys(STEPS, 0))
    kind: str = "CBCONV"
    # ascending linear indices of the updated output pixels (CB layers only)
    indices: np.ndarray | None = None
    output_pixels: int = 0


@dataclass
class CBConvState:
    geom: ConvGeometry
    filters: FilterMatrix
    threshold: float = 0.0
    fuse_relu: bool = True
    instrument: bool = True
    prev_input: np.ndarray | None = None
    prev_output: np.ndarray | None = None

    def __post_init__(self):
        self.filters.check(self.geom)
        if self.threshold < 0:
            raise ValueError(f"threshold must be >= 0, got {self.threshold}")

    def reset(self) -> None:
        self.prev_input = None
        self.prev_output = None


def detect_changes(cur: np.ndarray, prev: np.ndarray, tau: float) -> np.ndarray:
    """Pixels where ``|cur - prev| > tau`` in at least one channel."""
    if cur.shape != prev.shape:
        raise ShapeError(f"frame shapes differ: {cur.shape} vs {prev.shape}")
    if tau < 0:
        raise ValueError(f"threshold must be >= 0, got {tau}")
    diff = np.abs(np.subtract(cur, prev, dtype=DTYPE))
    return np.any(diff > DTYPE(tau), axis=0)


def dilate_changes(mask: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    """Output pixels whose zero-padded receptive field holds a flagged input pixel."""
    if mask.ndim != 2:
        raise ShapeError(f"change map must be 2-d, got {mask.shape}")
    ho, wo = geom.output_size(*mask.shape)
    padded = np.pad(mask, ((geom.pad_h, geom.pad_h), (geom.pad_w, geom.pad_w)))
    out = np.zeros((ho, wo), dtype=bool)
    sh, sw = geom.stride_h, geom.stride_w
    for j in range(geom.kernel_h):
        for i in range(geom.kernel_w):
            out |= padded[j:j + sh * (ho - 1) + 1:sh, i:i + sw * (wo - 1) + 1:sw]
    return out


def pool_changes(mask: np.ndarray, window: int, stride: int) -> np.ndarray:
    """Pooled pixels whose window holds a flagged pixel."""
    h, w = mask.shape
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    out = np.zeros((ho, wo), dtype=bool)
    for j in range(window):
        for i in range(window):
            out |= mask[j:j + stride * (ho - 1) + 1:stride,
                        i:i + stride * (wo - 1) + 1:stride]
    return out


def indices_to_mask(indices: np.ndarray, dims: tuple[int, int]) -> np.ndarray:
    h, w = dims
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= h * w):
        raise BoundsError(f"pixel index outside {h}x{w} grid")
    mask = np.zeros(h * w, dtype=bool)
    mask[indices] = True
    return mask.reshape(h, w)


def worst_case_propagation(updated: np.ndarray, geom_next: ConvGeometry,
                           dims: tuple[int, int]) -> np.ndarray:
    """Change map the next layer must assume if it skipped its own detection.

    ``updated`` lists the pixels refreshed upstream on the ``dims`` grid (the
    next layer's input grid); every one of them is taken to have changed.
    """
    return dilate_changes(indices_to_mask(updated, dims), geom_next)


def extract_indexes(mask: np.ndarray) -> np.ndarray:
    """Ascending linear indices of the set bits of a change map.

    The flattened map is cut into blocks of ``EXTRACT_BLOCK`` consecutive
    pixels; every block is condensed on its own and written at the offset
    given by the exclusive prefix sum of the block counts.
    """
    flat = np.ascontiguousarray(mask, dtype=bool).reshape(-1)
    n = flat.size
    nblocks = -(-n // EXTRACT_BLOCK)
    padded = np.zeros(nblocks * EXTRACT_BLOCK, dtype=bool)
    padded[:n] = flat
    blocks = padded.reshape(nblocks, EXTRACT_BLOCK)
    counts = blocks.sum(axis=1)
    offsets = np.concatenate(([0], np.cumsum(counts)))
    out = np.empty(int(offsets[-1]), dtype=np.int64)
    for b in np.flatnonzero(counts):
        local = np.flatnonzero(blocks[b])
        out[offsets[b]:offsets[b + 1]] = local + b * EXTRACT_BLOCK
    return out


def _patch_offsets(geom: ConvGeometry, padded_shape: tuple[int, int, int]) -> np.ndarray:
    _, hp, wp = padded_shape
    c = np.arange(geom.in_channels)[:, None, None]
    j = np.arange(geom.kernel_h)[None, :, None]
    i = np.arange(geom.kernel_w)[None, None, :]
    return ((c * hp + j) * wp + i).reshape(-1)


def gen_x_reduced(x: np.ndarray, indices: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    """Patch-matrix columns for the listed output pixels only.

    Column ``n`` equals column ``indices[n]`` of :func:`im2col_full`.
    """
    if x.ndim != 3 or x.shape[0] != geom.in_channels:
        raise ShapeError(f"input {x.shape} does not match {geom.in_channels} channels")
    ho, wo = geom.output_size(x.shape[1], x.shape[2])
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= ho * wo):
        raise BoundsError(f"output index outside {ho}x{wo} grid")
    xpad = pad_input(x, geom)
    yo, xo = np.divmod(indices, wo)
    base = yo * geom.stride_h * xpad.shape[2] + xo * geom.stride_w
    gather = _patch_offsets(geom, xpad.shape)[:, None] + base[None, :]
    return xpad.reshape(-1)[gather]


def update_output(prev_out: np.ndarray, y: np.ndarray, indices: np.ndarray,
                  fuse_relu: bool) -> np.ndarray:
    """Copy of ``prev_out`` with the listed pixels replaced by the columns of ``y``."""
    if y.ndim != 2 or y.shape[0] != prev_out.shape[0] or y.shape[1] != len(indices):
        raise ShapeError(
            f"result {y.shape} does not fit {len(indices)} pixels of {prev_out.shape}")
    out = prev_out.copy()
    if len(indices):
        out.reshape(out.shape[0], -1)[:, indices] = relu(y) if fuse_relu else y
    return out


def _full_frame(state: CBConvState, x: np.ndarray, stats: LayerStats) -> np.ndarray:
    h, w = x.shape[1:]
    ho, wo = state.geom.output_size(h, w)
    t0 = time.perf_counter_ns()
    patches = im2col_full(x, state.geom)
    t1 = time.perf_counter_ns()
    y = gemm(state.filters, patches).reshape(state.geom.out_channels, ho, wo)
    t2 = time.perf_counter_ns()
    out = relu(y) if state.fuse_relu else y
    t3 = time.perf_counter_ns()
    stats.changed_input_pixels = h * w
    stats.changed_output_pixels = ho * wo
    stats.indices = np.arange(ho * wo, dtype=np.int64)
    if state.instrument:
        stats.step_nanos.update(gen_x=t1 - t0, gemm=t2 - t1, update=t3 - t2)
    return out


def cbconv_forward(state: CBConvState, x: np.ndarray) -> tuple[np.ndarray, LayerStats]:
    """Run one frame through a CB layer and advance its state.

    The first frame after a reset is evaluated in full; later frames only
    recompute output pixels reached by a detected input change.
    """
    geom = state.geom
    if x.ndim != 3 or x.shape[0] != geom.in_channels:
        raise ShapeError(f"input {x.shape} does not match {geom.in_channels} channels")
    x = np.array(x, dtype=DTYPE, copy=True)
    ho, wo = geom.output_size(x.shape[1], x.shape[2])
    stats = LayerStats(output_pixels=ho * wo)
    timed = state.instrument
    clock = time.perf_counter_ns

    if state.prev_input is None:
        out = _full_frame(state, x, stats)
    else:
        if state.prev_input.shape != x.shape:
            raise ShapeError(f"input {x.shape} differs from previous {state.prev_input.shape}")
        t0 = clock() if timed else 0
        changed = detect_changes(x, state.prev_input, state.threshold)
        marked = dilate_changes(changed, geom)
        t1 = clock() if timed else 0
        indices = extract_indexes(marked)
        t2 = clock() if timed else 0
        patches = gen_x_reduced(x, indices, geom)
        t3 = clock() if timed else 0
        y = gemm(state.filters, patches)
        t4 = clock() if timed else 0
        out = update_output(state.prev_output, y, indices, state.fuse_relu)
        t5 = clock() if timed else 0
        stats.changed_input_pixels = int(np.count_nonzero(changed))
        stats.changed_output_pixels = int(indices.size)
        stats.indices = indices
        if timed:
            stats.step_nanos.update(detect=t1 - t0, extract=t2 - t1, gen_x=t3 - t2,
                                    gemm=t4 - t3, update=t5 - t4)

    stats.gemm_macs = geom.out_channels * geom.patch_size * stats.changed_output_pixels
    state.prev_input = x
    state.prev_output = out
    return out, stats
