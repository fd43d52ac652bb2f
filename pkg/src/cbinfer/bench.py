"""Benchmark drivers behind the command-line tools.

Each driver returns plain row dicts; writing them as CSV is left to
:func:`write_csv`.
"""

from __future__ import annotations

import csv
import time

import numpy as np

from .calibration import (
    calibrate_thresholds,
    pixel_disagreement,
    sweep_threshold_factor,
)
from .cbconv import dilate_changes, indices_to_mask, pool_changes
from .network import Network

SWEEP_FIELDS = ["factor", "errorIncrease", "numChangeTotal", "throughput", "macsTotal",
                "sequence", "gtErrorIncrease"]
CALIBRATION_FIELDS = ["layer", "threshold", "errorIncrease"]
PROPAGATION_FIELDS = ["frame", "layer", "pixels", "detected", "worstCase",
                      "detectedFraction", "worstCaseFraction"]


def write_csv(path, rows: list[dict], fields: list[str]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fields)
        writer.writeheader()
        writer.writerows(rows)


def run_fields(net: Network) -> list[str]:
    changed = [f"changed_L{k + 1}" for k in range(len(net.states))]
    return ["frameIndex", "engine", "wallNanos", "macsTotal", *changed, "disagreement"]


def cb_macs(stats) -> int:
    return sum(s.gemm_macs for s in stats if s.kind == "CBCONV")


def run_benchmark(nets: dict[str, Network], frames, engines=("baseline", "cbinfer")):
    """Run one sequence through each engine from reset.

    ``nets`` maps engine name to a network; the baseline net is always run
    since its labels are the reference for the disagreement column.
    Returns ``(rows, labels_by_engine)``.
    """
    order = ["baseline"] + [e for e in engines if e != "baseline"]
    labels: dict[str, list[np.ndarray]] = {}
    rows = []
    for engine in order:
        net = nets[engine].reset()
        labels[engine] = []
        cb = net.spec.cb_layers
        for t, frame in enumerate(frames):
            t0 = time.perf_counter_ns()
            lab, stats = net.forward(frame)
            wall = time.perf_counter_ns() - t0
            labels[engine].append(lab)
            if engine not in engines:
                continue
            row = {"frameIndex": t, "engine": engine, "wallNanos": wall,
                   "macsTotal": cb_macs(stats),
                   "disagreement": pixel_disagreement(lab, labels["baseline"][t])}
            for k, n in enumerate(cb):
                row[f"changed_L{k + 1}"] = stats[n].changed_output_pixels
            rows.append(row)
    rows.sort(key=lambda r: (r["frameIndex"], r["engine"]))
    return rows, labels


def calibration_rows(net: Network, sequences, budget: float, grid=None):
    trace: list = []
    thresholds = calibrate_thresholds(net, sequences, grid=grid, budget=budget, trace=trace)
    rows = [{"layer": layer + 1, "threshold": tau, "errorIncrease": err}
            for layer, tau, err in trace]
    return thresholds, rows


def sweep_rows(net: Network, sequences, base, factors) -> list[dict]:
    return [{"factor": p.factor, "errorIncrease": p.error_increase,
             "numChangeTotal": p.changed_pixels_total, "throughput": p.frames_per_second,
             "macsTotal": p.macs_total, "sequence": p.sequence,
             "gtErrorIncrease": "" if p.gt_error_increase is None else p.gt_error_increase}
            for p in sweep_threshold_factor(net, sequences, base, factors)]


def worst_case_map(net: Network, upstream: int, downstream: int, updated) -> np.ndarray:
    """Worst-case change map of CB layer ``downstream`` given the pixels updated by ``upstream``.

    The updated set is carried through every layer in between as if each
    touched pixel had changed, then grown by the downstream filter support.
    """
    spec = net.spec
    mask = indices_to_mask(updated, net.shapes[upstream][1][1:])
    for n in range(upstream + 1, downstream):
        layer = spec.layers[n]
        if layer.kind == "MAXPOOL":
            mask = pool_changes(mask, layer.window, layer.stride)
        elif layer.kind in ("CONV", "CBCONV"):
            mask = dilate_changes(mask, layer.geom)
    return dilate_changes(mask, spec.layers[downstream].geom)


def propagation_rows(net: Network, frames) -> list[dict]:
    """Detected versus worst-case changed pixels for every CB layer after the first.

    Frame 0 is a full evaluation and is skipped.
    """
    cb = net.spec.cb_layers
    net.reset()
    rows = []
    for t, frame in enumerate(frames):
        _, stats = net.forward(frame)
        if t == 0:
            continue
        for k in range(1, len(cb)):
            up, down = cb[k - 1], cb[k]
            worst = worst_case_map(net, up, down, stats[up].indices)
            detected = stats[down].changed_output_pixels
            pixels = worst.size
            nworst = int(np.count_nonzero(worst))
            rows.append({"frame": t, "layer": k + 1, "pixels": pixels, "detected": detected,
                         "worstCase": nworst, "detectedFraction": detected / pixels,
                         "worstCaseFraction": nworst / pixels})
    return rows
