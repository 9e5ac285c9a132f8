"""Sample buffers, STFT analysis/synthesis, band selection and test signals."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal as _signal
from scipy.io import wavfile as _wavfile

VALID_FRAME_LENGTHS = (512, 1024)
_WINDOWS = ("hann", "hamming", "rect")


@dataclass(frozen=True)
class SampleBuffer:
    """Mono audio: float64 samples at a fixed sampling rate in Hz."""

    samples: np.ndarray
    rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {samples.shape}")
        if samples.size == 0:
            raise ValueError("samples must not be empty")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite (no NaN/Inf)")
        if self.rate <= 0:
            raise ValueError(f"rate must be positive, got {self.rate}")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.rate

    def __len__(self) -> int:
        return self.samples.size


def _make_window(name: str, frame_len: int) -> np.ndarray:
    n = np.arange(frame_len)
    if name == "hann":
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / frame_len)
    if name == "hamming":
        return 0.54 - 0.46 * np.cos(2.0 * np.pi * n / frame_len)
    if name == "rect":
        return np.ones(frame_len)
    raise ValueError(f"unknown window {name!r}, expected one of {_WINDOWS}")


@dataclass
class TFGrid:
    """Complex STFT coefficients on a frames-by-bins grid.

    The analysis pads ``lead_pad`` zeros before the signal (and enough after)
    so every real sample sits where the overlapped window-square sum is
    bounded away from zero; that keeps synthesis exact and keeps modified
    grids (masks, per-bin gains) from blowing up at the edges.
    ``bin_mask`` marks bins retained by band selection; excluded bins hold
    zero coefficients.
    """

    coefficients: np.ndarray
    frame_len: int
    hop: int
    rate: int
    n_samples: int
    window: str = "hann"
    lead_pad: int = 0
    bin_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        coeff = np.asarray(self.coefficients, dtype=np.complex128)
        if coeff.ndim != 2:
            raise ValueError("coefficients must be 2-D (frames, bins)")
        n_bins = self.frame_len // 2 + 1
        if coeff.shape[1] != n_bins:
            raise ValueError(
                f"expected {n_bins} bins for frame_len {self.frame_len}, "
                f"got {coeff.shape[1]}"
            )
        self.coefficients = coeff
        if self.bin_mask is None:
            self.bin_mask = np.ones(n_bins, dtype=bool)
        else:
            self.bin_mask = np.asarray(self.bin_mask, dtype=bool)
            if self.bin_mask.shape != (n_bins,):
                raise ValueError("bin_mask must have one entry per bin")

    @property
    def n_frames(self) -> int:
        return self.coefficients.shape[0]

    @property
    def n_bins(self) -> int:
        return self.coefficients.shape[1]

    @property
    def bin_freqs(self) -> np.ndarray:
        return np.arange(self.n_bins) * (self.rate / self.frame_len)

    def copy(self) -> "TFGrid":
        return TFGrid(
            coefficients=self.coefficients.copy(),
            frame_len=self.frame_len,
            hop=self.hop,
            rate=self.rate,
            n_samples=self.n_samples,
            window=self.window,
            lead_pad=self.lead_pad,
            bin_mask=self.bin_mask.copy(),
        )


@dataclass
class StereoTFGrid:
    """Paired per-channel grids with identical geometry."""

    ch1: TFGrid
    ch2: TFGrid

    def __post_init__(self):
        a, b = self.ch1, self.ch2
        same = (
            a.frame_len == b.frame_len
            and a.hop == b.hop
            and a.rate == b.rate
            and a.n_frames == b.n_frames
            and a.n_samples == b.n_samples
        )
        if not same:
            raise ValueError("channel grids must share framing geometry")

    @property
    def bin_freqs(self) -> np.ndarray:
        return self.ch1.bin_freqs

    @property
    def bin_mask(self) -> np.ndarray:
        return self.ch1.bin_mask

    def copy(self) -> "StereoTFGrid":
        return StereoTFGrid(self.ch1.copy(), self.ch2.copy())


def stft(buffer: SampleBuffer, frame_len: int = 512, hop: int | None = None,
         window: str = "hann") -> TFGrid:
    """Analyze a buffer into a complex time-frequency grid.

    Args:
        buffer: input mono audio.
        frame_len: DFT frame length, 512 or 1024.
        hop: frame advance in samples; defaults to 3 * frame_len // 4
            (25 percent overlap between adjacent frames).
        window: taper name, one of "hann", "hamming", "rect".

    Returns:
        TFGrid of shape (n_frames, frame_len // 2 + 1).
    """
    if frame_len not in VALID_FRAME_LENGTHS:
        raise ValueError(f"frame_len must be one of {VALID_FRAME_LENGTHS}")
    if hop is None:
        hop = 3 * frame_len // 4
    if not 0 < hop <= frame_len:
        raise ValueError(f"hop must be in (0, frame_len], got {hop}")
    w = _make_window(window, frame_len)
    x = buffer.samples
    lead = frame_len - hop
    n_frames = max(1, int(np.ceil((x.size + lead) / hop)))
    total = (n_frames - 1) * hop + frame_len
    padded = np.zeros(total)
    padded[lead:lead + x.size] = x
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    coeff = np.fft.rfft(padded[idx] * w, axis=1)
    return TFGrid(
        coefficients=coeff,
        frame_len=frame_len,
        hop=hop,
        rate=buffer.rate,
        n_samples=x.size,
        window=window,
        lead_pad=lead,
    )


def istft(grid: TFGrid) -> SampleBuffer:
    """Resynthesize audio from a (possibly modified) grid.

    Overlap-adds windowed inverse DFT frames and divides by the exact
    window-square envelope, then trims back to the original sample extent.

    Raises:
        ValueError: if the window-sum envelope vanishes over the extent.
    """
    w = _make_window(grid.window, grid.frame_len)
    frames = np.fft.irfft(grid.coefficients, n=grid.frame_len, axis=1)
    total = (grid.n_frames - 1) * grid.hop + grid.frame_len
    num = np.zeros(total)
    env = np.zeros(total)
    wsq = w * w
    for m in range(grid.n_frames):
        start = m * grid.hop
        num[start:start + grid.frame_len] += frames[m] * w
        env[start:start + grid.frame_len] += wsq
    lo = grid.lead_pad
    hi = lo + grid.n_samples
    if hi > total:
        raise ValueError("grid too short for its declared sample count")
    if np.any(env[lo:hi] < 1e-12):
        raise ValueError("window-sum envelope vanishes inside the signal extent")
    samples = num[lo:hi] / env[lo:hi]
    return SampleBuffer(samples=samples, rate=grid.rate)


def alias_cutoff_hz(spacing_m: float, wave_speed: float) -> float:
    """Highest frequency with unambiguous inter-channel phase for a spacing."""
    return wave_speed / (2.0 * spacing_m)


def band_select(grid, f_min: float, f_max: float):
    """Zero out bins outside [f_min, f_max] and mark them excluded.

    Accepts a TFGrid or a StereoTFGrid (both channels share the mask).
    f_max above Nyquist is clamped with a warning. Idempotent: reapplying
    the same band is a no-op. Raises ValueError if no bins remain.
    """
    if isinstance(grid, StereoTFGrid):
        out = grid.copy()
        _apply_band(out.ch1, f_min, f_max)
        _apply_band(out.ch2, f_min, f_max)
        return out
    out = grid.copy()
    _apply_band(out, f_min, f_max)
    return out


def _apply_band(grid: TFGrid, f_min: float, f_max: float) -> None:
    nyquist = grid.rate / 2.0
    if f_min < 0:
        raise ValueError(f"f_min must be nonnegative, got {f_min}")
    if f_max > nyquist:
        warnings.warn(
            f"f_max {f_max:.1f} Hz above Nyquist {nyquist:.1f} Hz, clamping",
            stacklevel=3,
        )
        f_max = nyquist
    if f_min > f_max:
        raise ValueError(f"f_min {f_min} above f_max {f_max}")
    freqs = grid.bin_freqs
    keep = (freqs >= f_min) & (freqs <= f_max) & grid.bin_mask
    if not np.any(keep):
        raise ValueError("band selection removed every bin")
    grid.coefficients[:, ~keep] = 0.0
    grid.bin_mask = keep


def synth_speechlike(duration_s: float, rate: int, seed) -> SampleBuffer:
    """Deterministic speech-shaped test signal.

    Alternates voiced bursts (harmonic stacks with drifting pitch plus a
    noise floor) and unvoiced bursts (band-passed noise) with silent pauses,
    so the output is amplitude modulated, wideband and super-Gaussian.
    Identical (duration_s, rate, seed) always yields identical samples.

    Args:
        duration_s: length in seconds, > 0.
        rate: sampling rate in Hz.
        seed: RNG seed; different seeds give mutually independent signals.

    Returns:
        Zero-mean unit-RMS SampleBuffer.
    """
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * rate))
    out = np.zeros(n)
    t0 = 0
    while t0 < n:
        burst = int(rng.uniform(0.10, 0.35) * rate)
        pause = int(rng.uniform(0.08, 0.30) * rate)
        burst = min(burst, n - t0)
        if burst > 0:
            seg = _burst(rng, burst, rate)
            ramp = min(max(4, int(0.02 * rate)), burst // 2)
            envelope = np.ones(burst)
            if ramp > 0:
                up = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
                envelope[:ramp] = up
                envelope[-ramp:] = up[::-1]
            seg = seg - seg.mean()
            rms = np.sqrt(np.mean(seg * seg)) + 1e-12
            out[t0:t0 + burst] = rng.uniform(0.25, 1.0) * envelope * seg / rms
        t0 += burst + pause
    # Rumble below ~120 Hz carries little spatial information and inflates
    # inter-signal correlation on short excerpts.
    sos = _signal.butter(2, min(120.0, 0.45 * rate / 2), btype="highpass",
                         fs=rate, output="sos")
    out = _signal.sosfilt(sos, out)
    out = out - out.mean()
    rms = np.sqrt(np.mean(out * out))
    if rms < 1e-12:
        raise ValueError("synthesized signal is silent; increase duration")
    return SampleBuffer(samples=out / rms, rate=rate)


def _burst(rng: np.random.Generator, n: int, rate: int) -> np.ndarray:
    tt = np.arange(n) / rate
    if rng.random() < 0.6:
        f0 = rng.uniform(90.0, 280.0)
        sweep = rng.uniform(-0.25, 0.25)
        f0_traj = f0 * (1.0 + sweep * tt / max(tt[-1], 1e-6))
        phase = 2.0 * np.pi * np.cumsum(f0_traj) / rate
        n_harm = max(3, int(min(0.42 * rate, 7000.0) / f0))
        hs = np.arange(1, n_harm + 1)
        amps = rng.uniform(0.3, 1.0, n_harm) / hs ** rng.uniform(0.2, 0.6)
        phases = rng.uniform(0.0, 2.0 * np.pi, n_harm)
        seg = (amps[:, None] * np.sin(hs[:, None] * phase[None, :]
                                      + phases[:, None])).sum(axis=0)
        seg /= np.sqrt(np.mean(seg * seg)) + 1e-12
        seg = seg + 0.3 * rng.standard_normal(n)
    else:
        lo = rng.uniform(300.0, 2500.0)
        hi = min(lo * rng.uniform(2.0, 5.0), 0.45 * rate)
        sos = _signal.butter(4, [lo, hi], btype="bandpass", fs=rate,
                             output="sos")
        seg = _signal.sosfilt(sos, rng.standard_normal(n))
    return seg


def load_wav(path) -> SampleBuffer:
    """Read a WAV file as mono float64 in [-1, 1]; first channel if stereo."""
    try:
        rate, data = _wavfile.read(path)
    except Exception as exc:
        raise ValueError(f"could not parse WAV file {path}: {exc}") from exc
    if data.ndim > 1:
        data = data[:, 0]
    if data.dtype == np.int16:
        samples = data / 32767.0
    elif data.dtype == np.int32:
        samples = data / 2147483647.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 127.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample format {data.dtype}")
    return SampleBuffer(samples=samples, rate=int(rate))


def write_wav(path, buffer: SampleBuffer, sample_format: str = "float32") -> None:
    """Write a buffer as PCM16 or IEEE float32 WAV."""
    if sample_format == "float32":
        _wavfile.write(path, buffer.rate, buffer.samples.astype(np.float32))
    elif sample_format == "pcm16":
        clipped = np.clip(buffer.samples, -1.0, 1.0)
        _wavfile.write(path, buffer.rate,
                       np.round(clipped * 32767.0).astype(np.int16))
    else:
        raise ValueError("sample_format must be 'float32' or 'pcm16'")
