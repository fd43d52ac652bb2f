import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbinfer.calibration import (
    calibrate_thresholds,
    default_grid,
    pixel_disagreement,
    pixel_error,
    run_sequence,
    sweep_threshold_factor,
)
from cbinfer.errors import ShapeError
from cbinfer.network import Network, demo_spec, fit_head, init_weights
from cbinfer.synth import Sprite, SynthConfig, generate


def small_net(h=16, w=16, widths=(3, 4), kernel=3, seed=0):
    spec = demo_spec(2, h, w, widths=widths, kernel=kernel)
    return Network(spec, init_weights(spec, seed))


def noisy_seq(h=16, w=16, frames=4, noise=0.05, seed=0):
    return generate(SynthConfig(h, w, 2, frames, [Sprite(4, (0, 2), 1.0, (4, 2))],
                                noise_amplitude=noise, seed=seed))


# -- metrics -----------------------------------------------------------------

def test_disagreement_examples():
    a = np.zeros((10, 10), np.int64)
    assert pixel_disagreement(a, a) == 0.0
    b = a.copy()
    b[3, 7] = 1
    assert pixel_disagreement(a, b) == 1.0
    assert pixel_disagreement(a, a + 1) == 100.0
    assert pixel_error(b, a) == 1.0


def test_disagreement_shape_mismatch():
    with pytest.raises(ShapeError):
        pixel_disagreement(np.zeros((2, 2)), np.zeros((2, 3)))


# -- calibration -------------------------------------------------------------

def test_static_noise_free_picks_largest():
    net = small_net()
    frame = np.random.default_rng(0).random((2, 16, 16), dtype=np.float32)
    grid = [0.01, 0.1, 1.0, 10.0]
    assert calibrate_thresholds(net, [[frame] * 3], grid=grid) == [10.0, 10.0]


def brute_force_calibration(net, seqs, grid, budget):
    """Independent re-sweep: evaluate each candidate by running the frames by hand."""
    def labels(taus, seq):
        net.set_thresholds(taus)
        net.reset()
        return [net.forward(f)[0] for f in seq.frames]

    refs = [labels([0.0] * len(grid), s) for s in seqs]
    chosen = [0.0] * len(grid)
    for layer, candidates in enumerate(grid):
        ok = []
        for tau in candidates:
            trial = chosen[:layer] + [tau] + [0.0] * (len(grid) - layer - 1)
            errs = []
            for s, ref in zip(seqs, refs):
                out = labels(trial, s)
                errs.append(np.mean([100 * np.mean(a != b) for a, b in zip(out[1:], ref[1:])]))
            if np.mean(errs) <= budget:
                ok.append(tau)
        chosen[layer] = max(ok, default=0.0)
    return chosen


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 1000), st.sampled_from([0.0, 0.5, 5.0]))
def test_calibration_matches_exhaustive_resweep(seed, budget):
    net = small_net(seed=seed)
    seqs = [noisy_seq(seed=seed), noisy_seq(seed=seed + 1)]
    grid = [[0.01, 0.05, 0.2, 0.8], [0.05, 0.3, 1.0]]
    got = calibrate_thresholds(net, seqs, grid=grid, budget=budget)
    assert got == brute_force_calibration(net, seqs, grid, budget)


def test_calibration_restores_thresholds_and_traces():
    net = small_net()
    net.set_thresholds([0.3, 0.4])
    trace = []
    calibrate_thresholds(net, [noisy_seq()], grid=[0.1, 0.2, 0.3], trace=trace)
    assert net.thresholds == [0.3, 0.4]
    assert [(layer, tau) for layer, tau, _ in trace] == [
        (0, 0.1), (0, 0.2), (0, 0.3), (1, 0.1), (1, 0.2), (1, 0.3)]


def test_calibration_argument_errors():
    net = small_net()
    with pytest.raises(ValueError):
        calibrate_thresholds(net, [])
    with pytest.raises(ValueError):
        calibrate_thresholds(net, [noisy_seq()], grid=[[0.1], []])
    with pytest.raises(ValueError):
        calibrate_thresholds(net, [noisy_seq()], grid=[0.3, 0.1])
    with pytest.raises(ValueError):
        calibrate_thresholds(net, [noisy_seq()], budget=-1)


def test_default_grid_shape():
    grids = default_grid(small_net(), [noisy_seq()])
    assert len(grids) == 2
    for g in grids:
        assert len(g) == 16 and g[0] == pytest.approx(1e-3) and np.all(np.diff(g) > 0)


# -- sweep -------------------------------------------------------------------

def test_factor_zero_reproduces_reference():
    net = small_net()
    seq = noisy_seq(noise=0.1)
    full = net.spec.layers[0].geom.macs(16, 16) + net.spec.layers[1].geom.macs(16, 16)
    (zero, one) = sweep_threshold_factor(net, [seq], [0.2, 0.5], [0, 1])
    assert zero.error_increase == 0.0
    assert zero.macs_total == full * (len(seq) - 1)
    assert one.changed_pixels_total <= zero.changed_pixels_total


def test_changed_pixels_non_increasing_in_factor():
    net = small_net(24, 24, kernel=5)
    seqs = [noisy_seq(24, 24, 5, seed=s) for s in range(3)]
    factors = [0, 0.25, 0.5, 1, 2, 4]
    points = sweep_threshold_factor(net, seqs, [0.05, 0.2], factors)
    assert len(points) == 3 * len(factors)
    for s in range(3):
        counts = [p.changed_pixels_total for p in points[s * 6:(s + 1) * 6]]
        assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_sweep_reports_ground_truth_delta():
    net = small_net()
    points = sweep_threshold_factor(net, [noisy_seq()], [0.1, 0.1], [0, 1])
    assert points[0].gt_error_increase == 0.0
    assert points[1].gt_error_increase is not None


def test_sweep_rejects_negative_factor():
    with pytest.raises(ValueError):
        sweep_threshold_factor(small_net(), [noisy_seq()], [0.1, 0.1], [-1])


def test_low_motion_macs_fraction():
    h = w = 48
    spec = demo_spec(3, h, w, widths=(8, 8), kernel=7)
    net = Network(spec, init_weights(spec, 0))
    seq = generate(SynthConfig(h, w, 3, 6, [Sprite(4, (0, 1), 1.0, (20, 10))], seed=0))
    fit_head(net, seq.frames[0], seq.labels[0])
    (point,) = sweep_threshold_factor(net, [seq], [0.05, 0.05], [1])
    full = sum(spec.layers[n].geom.macs(h, w) for n in spec.cb_layers) * (len(seq) - 1)
    assert point.macs_total <= 0.15 * full


def test_run_sequence_measures_from_second_frame():
    run = run_sequence(small_net(), noisy_seq())
    assert len(run.labels) == 4 and run.frames_per_second > 0
