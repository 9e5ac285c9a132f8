"""Per-bin inter-channel delay samples and their smoothed density."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import trapezoid
from scipy.signal import find_peaks as _scipy_find_peaks

from .audio import StereoTFGrid


@dataclass(frozen=True)
class ItdSamples:
    """Weighted delay estimates pooled over time-frequency bins."""

    delays: np.ndarray
    weights: np.ndarray
    freqs_hz: np.ndarray
    max_itd: float
    n_clamped: int = 0
    n_rejected: int = 0

    def __post_init__(self):
        if self.delays.shape != self.weights.shape:
            raise ValueError("delays and weights must align")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")

    def __len__(self) -> int:
        return self.delays.size


def bin_itd(grid: StereoTFGrid, max_itd_s: float,
            power_floor_db: float = -35.0) -> ItdSamples:
    """Per-bin delay of channel 2 relative to channel 1.

    Each retained time-frequency bin contributes one delay estimate
    -angle(X2/X1) / (2 pi f), weighted by |X1|*|X2|. The DC column is
    always skipped. Bins whose channel-1 magnitude sits more than
    power_floor_db below the maximum of their own frame are dropped;
    estimates outside [-max_itd_s, +max_itd_s] are clamped to the
    boundary and counted.
    """
    if max_itd_s <= 0:
        raise ValueError("max_itd_s must be positive")
    freqs = grid.ch1.bin_freqs
    cols = freqs > 0
    if grid.ch1.bin_mask is not None:
        cols &= grid.ch1.bin_mask
    if not np.any(cols):
        raise ValueError("no usable frequency columns (is the band empty?)")
    x1 = grid.ch1.coefficients[:, cols]
    x2 = grid.ch2.coefficients[:, cols]
    f = freqs[cols]
    mag1 = np.abs(x1)
    floor = mag1.max(axis=1, keepdims=True) * 10.0 ** (power_floor_db / 20.0)
    keep = mag1 > floor
    n_rejected = int(keep.size - keep.sum())
    if not np.any(keep):
        raise ValueError("power floor rejected every bin")
    weight = mag1 * np.abs(x2)
    cross = x2[keep] * np.conj(x1[keep])
    f_keep = np.broadcast_to(f[None, :], weight.shape)[keep]
    delays = -np.angle(cross) / (2.0 * np.pi * f_keep)
    clipped = np.clip(delays, -max_itd_s, max_itd_s)
    n_clamped = int(np.count_nonzero(clipped != delays))
    return ItdSamples(
        delays=clipped,
        weights=weight[keep],
        freqs_hz=f_keep,
        max_itd=float(max_itd_s),
        n_clamped=n_clamped,
        n_rejected=n_rejected,
    )


def merge_itd_samples(parts: list) -> ItdSamples:
    """Pool delay samples from several captures at the same pose."""
    if not parts:
        raise ValueError("nothing to merge")
    max_itds = {p.max_itd for p in parts}
    if len(max_itds) != 1:
        raise ValueError("cannot merge samples with different supports")
    return ItdSamples(
        delays=np.concatenate([p.delays for p in parts]),
        weights=np.concatenate([p.weights for p in parts]),
        freqs_hz=np.concatenate([p.freqs_hz for p in parts]),
        max_itd=parts[0].max_itd,
        n_clamped=sum(p.n_clamped for p in parts),
        n_rejected=sum(p.n_rejected for p in parts),
    )


def emphasize_high_freq(samples: ItdSamples, power: float = 1.0) -> ItdSamples:
    """Rescale sample weights by (f / f_max)^power.

    The per-bin delay error from additive noise scales like 1/f (a fixed
    phase error maps to a smaller delay at higher frequency), so pushing
    weight toward high-frequency bins tightens each source's delay
    cluster. power=0 is the identity.
    """
    if power == 0:
        return samples
    f_max = float(samples.freqs_hz.max())
    if f_max <= 0:
        raise ValueError("no positive frequencies in samples")
    scale = (samples.freqs_hz / f_max) ** power
    return replace(samples, weights=samples.weights * scale)


def _weighted_quantile(values, weights, q):
    order = np.argsort(values)
    v = values[order]
    w = weights[order]
    cum = np.cumsum(w) - 0.5 * w
    cum /= w.sum()
    return np.interp(q, cum, v)


@dataclass(frozen=True)
class ItdDensity:
    """Gaussian-kernel density of delay samples over the physical support.

    density holds values on an even grid for plotting and peak finding;
    evaluate() works from the underlying mixture, so scoring points between
    grid nodes loses nothing.
    """

    grid: np.ndarray
    density: np.ndarray
    bandwidth_s: float
    max_itd: float
    sample_delays: np.ndarray
    sample_weights: np.ndarray
    norm_factor: float

    def evaluate(self, points) -> np.ndarray:
        """Exact mixture density at arbitrary delay values."""
        pts = np.atleast_1d(np.asarray(points, dtype=np.float64))
        z = (pts[:, None] - self.sample_delays[None, :]) / self.bandwidth_s
        kernel = np.exp(-0.5 * z * z)
        scale = self.norm_factor / (
            self.bandwidth_s * np.sqrt(2.0 * np.pi) * self.sample_weights.sum()
        )
        return scale * kernel @ self.sample_weights

    def to_dict(self) -> dict:
        return {
            "grid_s": self.grid.tolist(),
            "density": self.density.tolist(),
            "bandwidth_s": self.bandwidth_s,
            "max_itd_s": self.max_itd,
        }


def fit_kde(samples: ItdSamples, grid_size: int = 1024,
            bandwidth_s: float | None = None) -> ItdDensity:
    """Weighted Gaussian KDE over [-max_itd, +max_itd].

    The automatic bandwidth starts from Silverman's rule with the Kish
    effective sample count, then is kept inside
    [support/512, support/128] so that nearby delay clusters a few tens of
    microseconds apart stay resolved while noiseless spikes still get a
    finite width.
    """
    if len(samples) == 0:
        raise ValueError("no delay samples to smooth")
    d = samples.delays
    w = samples.weights / samples.weights.sum()
    support = 2.0 * samples.max_itd
    if bandwidth_s is None:
        n_eff = 1.0 / np.sum(w * w)
        mean = float(np.sum(w * d))
        std = float(np.sqrt(np.sum(w * (d - mean) ** 2)))
        q1, q3 = _weighted_quantile(d, w, [0.25, 0.75])
        spread = min(std, (q3 - q1) / 1.34) if q3 > q1 else std
        h = 0.9 * spread * n_eff ** (-0.2)
        bandwidth_s = float(np.clip(h, support / 512.0, support / 128.0))
    elif bandwidth_s <= 0:
        raise ValueError("bandwidth_s must be positive")
    grid = np.linspace(-samples.max_itd, samples.max_itd, grid_size)
    raw = ItdDensity(
        grid=grid, density=np.zeros(grid_size), bandwidth_s=float(bandwidth_s),
        max_itd=samples.max_itd, sample_delays=d, sample_weights=w,
        norm_factor=1.0,
    )
    density = raw.evaluate(grid)
    integral = trapezoid(density, grid)
    if integral <= 0:
        raise ValueError("degenerate density")
    return ItdDensity(
        grid=grid,
        density=density / integral,
        bandwidth_s=float(bandwidth_s),
        max_itd=samples.max_itd,
        sample_delays=d,
        sample_weights=w,
        norm_factor=1.0 / integral,
    )


@dataclass(frozen=True)
class DensityPeak:
    delay_s: float
    height: float
    prominence: float


def find_density_peaks(density: ItdDensity, rel_prominence: float = 0.08,
                       min_separation_s: float | None = None) -> list:
    """Local maxima of the density, tallest first.

    Peaks at the support boundary count (a source broadside to nothing,
    i.e. at local angle 0 or 180, piles up exactly at the edge). Interior
    peak locations are refined by parabolic interpolation; peaks closer
    together than min_separation_s (default: one bandwidth) are merged
    keeping the taller one.
    """
    y = density.density
    grid = density.grid
    step = grid[1] - grid[0]
    if min_separation_s is None:
        min_separation_s = density.bandwidth_s
    padded = np.concatenate([[-np.inf], y, [-np.inf]])
    idx, props = _scipy_find_peaks(padded, prominence=rel_prominence * y.max())
    peaks = []
    for i, prom in zip(idx - 1, props["prominences"]):
        loc = grid[i]
        height = y[i]
        if 0 < i < y.size - 1:
            a, b, c = y[i - 1], y[i], y[i + 1]
            denom = a - 2.0 * b + c
            if denom < 0:
                shift = 0.5 * (a - c) / denom
                loc = loc + np.clip(shift, -0.5, 0.5) * step
                height = b - 0.25 * (a - c) * shift
        peaks.append(DensityPeak(float(loc), float(height), float(prom)))
    peaks.sort(key=lambda p: -p.height)
    kept = []
    for p in peaks:
        if all(abs(p.delay_s - q.delay_s) >= min_separation_s for q in kept):
            kept.append(p)
    return kept
