"""Threshold calibration, joint threshold scaling and label-map metrics.

Error increase is measured as pixel disagreement against the all-zero
threshold run of the same network, which equals the full-frame baseline
exactly; no ground truth is needed. Where a sequence carries ground-truth
labels the signed change in pixel error is reported as well.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .network import Network, resample_labels

GRID_POINTS = 16
GRID_FLOOR = 1e-3
DEFAULT_BUDGET = 0.1  # percentage points


def pixel_disagreement(a: np.ndarray, b: np.ndarray) -> float:
    """Percentage of pixels whose labels differ."""
    if a.shape != b.shape:
        raise ShapeError(f"label maps differ in shape: {a.shape} vs {b.shape}")
    return 100.0 * np.count_nonzero(a != b) / a.size


def pixel_error(pred: np.ndarray, gt: np.ndarray) -> float:
    """Percentage of misclassified pixels."""
    return pixel_disagreement(pred, gt)


@dataclass
class RunResult:
    labels: list[np.ndarray]
    stats: list[list]
    wall_nanos: list[int]

    def measured(self) -> slice:
        # the first frame is a full evaluation by policy and is not measured
        return slice(1, None) if len(self.labels) > 1 else slice(None)

    @property
    def changed_pixels_total(self) -> int:
        return sum(s.changed_output_pixels for frame in self.stats[self.measured()]
                   for s in frame if s.kind == "CBCONV")

    @property
    def macs_total(self) -> int:
        """GEMM MACs of the CBCONV layers (the layers the change-based path replaces)."""
        return sum(s.gemm_macs for frame in self.stats[self.measured()]
                   for s in frame if s.kind == "CBCONV")

    @property
    def frames_per_second(self) -> float:
        nanos = sum(self.wall_nanos[self.measured()])
        return len(self.wall_nanos[self.measured()]) / (nanos * 1e-9) if nanos else float("inf")


def _frames(seq):
    return seq.frames if hasattr(seq, "frames") else seq


def run_sequence(net: Network, seq) -> RunResult:
    """Evaluate every frame of a sequence from a fresh state."""
    net.reset()
    labels, stats, wall = [], [], []
    for frame in _frames(seq):
        t0 = time.perf_counter_ns()
        lab, st = net.forward(frame)
        wall.append(time.perf_counter_ns() - t0)
        labels.append(lab)
        stats.append(st)
    return RunResult(labels, stats, wall)


def run_with_thresholds(net: Network, seq, thresholds) -> RunResult:
    saved = net.thresholds
    net.set_thresholds(thresholds)
    try:
        return run_sequence(net, seq)
    finally:
        net.set_thresholds(saved)


def reference_runs(net: Network, sequences) -> list[RunResult]:
    return [run_with_thresholds(net, seq, [0.0] * len(net.states)) for seq in sequences]


def error_increase(run: RunResult, ref: RunResult) -> float:
    """Mean disagreement with the reference over the measured frames."""
    sl = run.measured()
    return float(np.mean([pixel_disagreement(a, b)
                          for a, b in zip(run.labels[sl], ref.labels[sl])]))


def gt_error_increase(run: RunResult, ref: RunResult, gt: list[np.ndarray]) -> float:
    """Signed change in error rate against ground truth, mean over measured frames."""
    sl = run.measured()
    deltas = []
    for pred, base, truth in zip(run.labels[sl], ref.labels[sl], gt[sl]):
        truth = resample_labels(truth, pred.shape)
        deltas.append(pixel_error(pred, truth) - pixel_error(base, truth))
    return float(np.mean(deltas))


def max_layer_differences(net: Network, sequences) -> list[float]:
    """Largest frame-to-frame input change seen by each CB layer at threshold 0."""
    cb = net.spec.cb_layers
    saved, keep = net.thresholds, net.keep_activations
    net.set_thresholds([0.0] * len(cb))
    net.keep_activations = True
    peak = [0.0] * len(cb)
    try:
        for seq in sequences:
            net.reset()
            prev = None
            for frame in _frames(seq):
                net.forward(frame)
                cur = [net.activations[n] for n in cb]
                if prev is not None:
                    for k, (a, b) in enumerate(zip(cur, prev)):
                        peak[k] = max(peak[k], float(np.max(np.abs(a - b))))
                prev = cur
    finally:
        net.set_thresholds(saved)
        net.keep_activations = keep
        net.activations = []
    return peak


def default_grid(net: Network, sequences, points: int = GRID_POINTS) -> list[np.ndarray]:
    """Per-layer log-spaced candidates from 1e-3 to twice the largest observed change."""
    grids = []
    for peak in max_layer_differences(net, sequences):
        hi = max(2.0 * peak, 2 * GRID_FLOOR)
        grids.append(np.geomspace(GRID_FLOOR, hi, points))
    return grids


def calibrate_thresholds(net: Network, sequences, grid=None, budget: float = DEFAULT_BUDGET,
                         trace: list | None = None) -> list[float]:
    """Pick per-layer thresholds one layer at a time, first to last.

    Layer ``L`` is swept over its grid with earlier layers at their chosen
    values and later layers at zero; it keeps the largest candidate whose
    mean error increase stays within ``budget`` (0 if none does).
    ``trace`` collects ``(layer, threshold, error_increase)`` per evaluation.
    """
    sequences = list(sequences)
    if not sequences:
        raise ValueError("calibration needs at least one sequence")
    if budget < 0:
        raise ValueError(f"budget must be >= 0, got {budget}")
    nlayers = len(net.states)
    if grid is None:
        grid = default_grid(net, sequences)
    elif len(grid) and np.isscalar(grid[0]):
        grid = [grid] * nlayers
    grid = [np.asarray(g, dtype=float) for g in grid]
    if len(grid) != nlayers or any(g.size == 0 for g in grid):
        raise ValueError("need a non-empty candidate grid for every CB layer")
    if any(np.any(np.diff(g) < 0) or np.any(g < 0) for g in grid):
        raise ValueError("threshold grids must be ascending and non-negative")

    refs = reference_runs(net, sequences)
    chosen = [0.0] * nlayers
    for layer in range(nlayers):
        best = 0.0
        for tau in grid[layer]:
            candidate = list(chosen)
            candidate[layer] = float(tau)
            err = float(np.mean([error_increase(run_with_thresholds(net, seq, candidate), ref)
                                 for seq, ref in zip(sequences, refs)]))
            if trace is not None:
                trace.append((layer, float(tau), err))
            if err <= budget:
                best = float(tau)
        chosen[layer] = best
    return chosen


@dataclass
class TradeoffPoint:
    factor: float
    error_increase: float
    changed_pixels_total: int
    frames_per_second: float
    macs_total: int
    sequence: str = ""
    gt_error_increase: float | None = None


def sweep_threshold_factor(net: Network, sequences, base, factors) -> list[TradeoffPoint]:
    """Scale all thresholds jointly by each factor; one point per (sequence, factor)."""
    factors = [float(f) for f in factors]
    if any(f < 0 for f in factors):
        raise ValueError("factors must be >= 0")
    sequences = list(sequences)
    refs = reference_runs(net, sequences)
    points = []
    for k, (seq, ref) in enumerate(zip(sequences, refs)):
        name = getattr(seq, "name", f"seq{k}")
        gt = getattr(seq, "labels", None)
        for f in factors:
            run = run_with_thresholds(net, seq, [f * t for t in base])
            points.append(TradeoffPoint(
                factor=f,
                error_increase=error_increase(run, ref),
                changed_pixels_total=run.changed_pixels_total,
                frames_per_second=run.frames_per_second,
                macs_total=run.macs_total,
                sequence=name,
                gt_error_increase=gt_error_increase(run, ref, gt) if gt else None,
            ))
    return points
