"""Per-bin delay extraction, density smoothing and peak picking."""

import numpy as np
import pytest
from scipy.integrate import trapezoid

from conftest import make_scene
from rotasep import (ArrayPose, ItdSamples, StereoTFGrid, alias_cutoff_hz,
                     band_select, bin_itd, emphasize_high_freq,
                     find_density_peaks, fit_kde, merge_itd_samples, render,
                     stft)

RATE = 16000
MAX_ITD = 1.45772594752186587e-04
TAU_60 = 7.28862973760933068e-05
TAU_170 = -1.43557981488660061e-04
TAU_70 = 4.98571637500974936e-05
TAU_M50 = 9.37008177385625880e-05


def _grid_for(scene, pose, duration_s, frame_len=512):
    cap = render(scene, pose, duration_s=duration_s)
    pair = StereoTFGrid(ch1=stft(cap.ch1, frame_len=frame_len),
                        ch2=stft(cap.ch2, frame_len=frame_len))
    f_max = alias_cutoff_hz(pose.spacing_m, pose.wave_speed)
    return band_select(pair, 50.0, f_max)


def test_single_source_delay_recovered():
    scene = make_scene([60.0], duration_s=2.0)
    pose = ArrayPose()
    grid = _grid_for(scene, pose, 2.0)
    samples = bin_itd(grid, pose.max_itd)
    assert len(samples) > 1000
    assert samples.max_itd == pose.max_itd
    peak = find_density_peaks(fit_kde(samples))[0]
    assert abs(peak.delay_s - TAU_60) < 1e-7
    # the pooled samples themselves center on the true delay
    mean = float(np.average(samples.delays, weights=samples.weights))
    assert abs(mean - TAU_60) < 1e-6


def test_three_source_peaks_frozen():
    scene = make_scene([170.0, 70.0, -50.0], duration_s=2.0)
    pose = ArrayPose()
    grid = _grid_for(scene, pose, 2.0)
    samples = bin_itd(grid, pose.max_itd)
    peaks = find_density_peaks(fit_kde(samples))
    assert len(peaks) >= 3
    top3 = sorted(sorted(peaks, key=lambda p: -p.height)[:3],
                  key=lambda p: p.delay_s)
    theory = sorted([TAU_170, TAU_70, TAU_M50])
    for peak, expect in zip(top3, theory):
        assert abs(peak.delay_s - expect) < 3e-6


def test_itd_samples_validation():
    with pytest.raises(ValueError):
        ItdSamples(delays=np.zeros(4), weights=np.zeros(3),
                   freqs_hz=np.zeros(4), max_itd=MAX_ITD)
    with pytest.raises(ValueError):
        ItdSamples(delays=np.zeros(4), weights=-np.ones(4),
                   freqs_hz=np.zeros(4), max_itd=MAX_ITD)


def test_bin_itd_guards():
    scene = make_scene([60.0], duration_s=0.5)
    pose = ArrayPose()
    grid = _grid_for(scene, pose, 0.5)
    with pytest.raises(ValueError):
        bin_itd(grid, 0.0)
    with pytest.raises(ValueError):
        # a floor at the per-frame maximum rejects every bin
        bin_itd(grid, pose.max_itd, power_floor_db=0.0)


def test_bin_itd_clamps_to_support():
    scene = make_scene([0.0], duration_s=0.5)
    pose = ArrayPose()
    grid = _grid_for(scene, pose, 0.5)
    tight = 0.2 * MAX_ITD
    samples = bin_itd(grid, tight)
    # the true delay sits at +max_itd, far outside the narrowed support
    assert samples.n_clamped > 0
    assert np.all(np.abs(samples.delays) <= tight + 1e-18)


def test_bin_itd_respects_band_mask():
    scene = make_scene([60.0], duration_s=0.5)
    pose = ArrayPose()
    cap = render(scene, pose, duration_s=0.5)
    pair = StereoTFGrid(ch1=stft(cap.ch1, frame_len=512),
                        ch2=stft(cap.ch2, frame_len=512))
    banded = band_select(pair, 1000.0, 2000.0)
    samples = bin_itd(banded, pose.max_itd)
    assert np.all(samples.freqs_hz >= 1000.0)
    assert np.all(samples.freqs_hz <= 2000.0)


def test_merge_itd_samples():
    scene = make_scene([60.0], duration_s=1.0)
    pose = ArrayPose()
    grid = _grid_for(scene, pose, 1.0)
    s = bin_itd(grid, pose.max_itd)
    merged = merge_itd_samples([s, s])
    assert len(merged) == 2 * len(s)
    assert merged.max_itd == s.max_itd
    other = ItdSamples(delays=np.zeros(3), weights=np.ones(3),
                       freqs_hz=np.full(3, 100.0), max_itd=2 * MAX_ITD)
    with pytest.raises(ValueError):
        merge_itd_samples([s, other])
    with pytest.raises(ValueError):
        merge_itd_samples([])


def test_emphasize_high_freq():
    samples = ItdSamples(delays=np.zeros(3), weights=np.array([1.0, 1.0, 1.0]),
                         freqs_hz=np.array([100.0, 200.0, 400.0]),
                         max_itd=MAX_ITD)
    same = emphasize_high_freq(samples, power=0.0)
    assert np.array_equal(same.weights, samples.weights)
    tilted = emphasize_high_freq(samples, power=1.0)
    assert np.allclose(tilted.weights, [0.25, 0.5, 1.0])
    square = emphasize_high_freq(samples, power=2.0)
    assert np.allclose(square.weights, [0.0625, 0.25, 1.0])
    silent = ItdSamples(delays=np.zeros(2), weights=np.ones(2),
                        freqs_hz=np.zeros(2), max_itd=MAX_ITD)
    with pytest.raises(ValueError):
        emphasize_high_freq(silent, power=1.0)


def _samples_at(delays, weights=None, max_itd=MAX_ITD):
    d = np.asarray(delays, dtype=float)
    w = np.ones_like(d) if weights is None else np.asarray(weights, float)
    return ItdSamples(delays=d, weights=w,
                      freqs_hz=np.full(d.size, 1000.0), max_itd=max_itd)


def test_kde_normalization_and_bandwidth_bounds():
    rng = np.random.default_rng(0)
    samples = _samples_at(rng.uniform(-MAX_ITD, MAX_ITD, 500))
    density = fit_kde(samples)
    integral = trapezoid(density.density, density.grid)
    assert integral == pytest.approx(1.0, abs=1e-6)
    support = 2 * MAX_ITD
    assert support / 512 <= density.bandwidth_s <= support / 128
    # a pathologically tight sample set still gets a usable bandwidth
    tight = _samples_at(np.full(50, 0.3 * MAX_ITD))
    d_tight = fit_kde(tight)
    assert d_tight.bandwidth_s >= support / 512


def test_kde_explicit_bandwidth_and_errors():
    samples = _samples_at([0.0, 1e-5, -2e-5])
    density = fit_kde(samples, bandwidth_s=3e-6)
    assert density.bandwidth_s == pytest.approx(3e-6)
    with pytest.raises(ValueError):
        fit_kde(samples, bandwidth_s=-1.0)
    empty = ItdSamples(delays=np.array([]), weights=np.array([]),
                       freqs_hz=np.array([]), max_itd=MAX_ITD)
    with pytest.raises(ValueError):
        fit_kde(empty)


def test_kde_evaluate_matches_grid():
    samples = _samples_at([-5e-5, 0.0, 5e-5], weights=[1.0, 2.0, 1.0])
    density = fit_kde(samples)
    probe = density.grid[::97]
    again = density.evaluate(probe)
    assert np.allclose(again, density.density[::97], rtol=1e-9, atol=1e-12)


def test_find_density_peaks_bimodal():
    rng = np.random.default_rng(1)
    a = rng.normal(-6e-5, 2e-6, 400)
    b = rng.normal(7e-5, 2e-6, 400)
    density = fit_kde(_samples_at(np.concatenate([a, b])))
    peaks = find_density_peaks(density)
    assert len(peaks) == 2
    delays = sorted(p.delay_s for p in peaks)
    assert abs(delays[0] - (-6e-5)) < 3e-6
    assert abs(delays[1] - 7e-5) < 3e-6
    assert all(p.prominence > 0 for p in peaks)


def test_find_density_peaks_merges_close_modes():
    rng = np.random.default_rng(2)
    a = rng.normal(0.0, 1.5e-6, 400)
    b = rng.normal(2e-6, 1.5e-6, 400)
    density = fit_kde(_samples_at(np.concatenate([a, b])))
    peaks = find_density_peaks(density, min_separation_s=1e-5)
    assert len(peaks) == 1


def test_find_density_peaks_prominence_filter():
    rng = np.random.default_rng(3)
    big = rng.normal(-5e-5, 2e-6, 2000)
    tiny = rng.normal(8e-5, 2e-6, 20)
    density = fit_kde(_samples_at(np.concatenate([big, tiny])))
    strict = find_density_peaks(density, rel_prominence=0.25)
    assert len(strict) == 1
    assert abs(strict[0].delay_s - (-5e-5)) < 3e-6
    loose = find_density_peaks(density, rel_prominence=0.001)
    assert len(loose) >= 2


def test_edge_peak_detected():
    # all mass at the support boundary still shows up as a peak
    density = fit_kde(_samples_at(np.full(200, MAX_ITD)))
    peaks = find_density_peaks(density)
    assert len(peaks) >= 1
    assert abs(peaks[0].delay_s - MAX_ITD) < 5e-6
