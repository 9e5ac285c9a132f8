"""Two-microphone scene rendering: geometry, delays, rooms, rotation sessions."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as _fft
from scipy import signal as _signal

from .audio import SampleBuffer, synth_speechlike

SPEED_OF_SOUND = 343.0


def normalize_angle(deg: float) -> float:
    """Wrap an angle in degrees to the half-open interval (-180, 180]."""
    wrapped = -((-float(deg) + 180.0) % 360.0 - 180.0)
    return 180.0 if wrapped == -180.0 else wrapped


@dataclass(frozen=True)
class ArrayPose:
    """Rigid two-microphone array: spacing, axis orientation, wave speed."""

    spacing_m: float = 0.05
    orientation_deg: float = 0.0
    wave_speed: float = SPEED_OF_SOUND

    def __post_init__(self):
        if self.spacing_m <= 0:
            raise ValueError("spacing_m must be positive")
        if self.wave_speed <= 0:
            raise ValueError("wave_speed must be positive")
        object.__setattr__(
            self, "orientation_deg", normalize_angle(self.orientation_deg)
        )

    @property
    def max_itd(self) -> float:
        """Largest possible inter-channel delay magnitude in seconds."""
        return self.spacing_m / self.wave_speed


def rotate_pose(pose: ArrayPose, delta_deg: float) -> ArrayPose:
    """Return the pose after rotating the array axis by delta_deg."""
    return ArrayPose(
        spacing_m=pose.spacing_m,
        orientation_deg=normalize_angle(pose.orientation_deg + delta_deg),
        wave_speed=pose.wave_speed,
    )


def tdoa(aoa_deg: float, pose: ArrayPose) -> float:
    """Inter-channel delay in seconds for a far-field source.

    Positive values mean channel 2 receives the wavefront later than
    channel 1. Channel 1 sits on the positive axis side, so a source along
    the axis (local angle 0) gives the full +spacing/wave_speed delay.
    """
    local = np.radians(aoa_deg - pose.orientation_deg)
    return pose.max_itd * float(np.cos(local))


@dataclass(frozen=True)
class SourceSpec:
    """One emitter: global angle of arrival, range and waveform."""

    aoa_deg: float
    distance_m: float
    waveform: SampleBuffer

    def __post_init__(self):
        if self.distance_m <= 0:
            raise ValueError("distance_m must be positive")
        object.__setattr__(self, "aoa_deg", normalize_angle(self.aoa_deg))


@dataclass
class SceneConfig:
    """Sources plus environment for rendering captures.

    room is either "anechoic" (far-field plane waves, no reflections) or a
    (width_m, height_m) rectangle simulated with a 2-D image-source model,
    array at the room center. snr_db of None means noiseless. Per-source
    gains are equalized on the reference channel, so the ratio of any
    source to the sum of the others is -10*log10(K-1) dB.
    """

    sources: list
    room: object = "anechoic"
    t60_ms: float = 0.0
    snr_db: float | None = None
    seed: int = 0
    equalize: bool = True
    distance_gain: bool = False
    _cache: dict = field(default_factory=dict, repr=False, compare=False,
                         init=False)

    def __post_init__(self):
        if not self.sources:
            raise ValueError("scene needs at least one source")
        rates = {s.waveform.rate for s in self.sources}
        if len(rates) != 1:
            raise ValueError(f"source waveforms disagree on rate: {rates}")
        if self.room != "anechoic":
            w, h = self.room
            if w <= 0 or h <= 0:
                raise ValueError("room dimensions must be positive")
            for s in self.sources:
                pos = _source_position(s, (w, h))
                if not (0 < pos[0] < w and 0 < pos[1] < h):
                    raise ValueError(
                        f"source at {s.distance_m} m / {s.aoa_deg} deg falls "
                        "outside the room"
                    )
            if self.t60_ms < 0:
                raise ValueError("t60_ms must be nonnegative")
        elif self.t60_ms:
            raise ValueError("t60_ms requires a rectangular room")

    @property
    def rate(self) -> int:
        return self.sources[0].waveform.rate

    @property
    def n_samples(self) -> int:
        return min(len(s.waveform) for s in self.sources)


@dataclass(frozen=True)
class StereoCapture:
    """Synchronized pair of channel recordings at a fixed pose."""

    ch1: SampleBuffer
    ch2: SampleBuffer
    pose: ArrayPose

    def __post_init__(self):
        if len(self.ch1) != len(self.ch2) or self.ch1.rate != self.ch2.rate:
            raise ValueError("channels must match in length and rate")


def fractional_delay(x: np.ndarray, delay_s: float, rate: int,
                     circular: bool = False) -> np.ndarray:
    """Delay a signal by an arbitrary (sub-sample) amount via FFT phase shift.

    With circular=True the delay wraps around the ends, which is exact for
    periodic constructions. Otherwise the signal is zero-padded so the
    wrapped tail lands in discarded padding.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if circular:
        padded, lead = x, 0
        total = n
    else:
        shift = int(np.ceil(abs(delay_s) * rate)) + 8
        lead = shift
        total = _fft.next_fast_len(n + 2 * shift)
        padded = np.zeros(total)
        padded[lead:lead + n] = x
    spec = np.fft.rfft(padded)
    freqs = np.fft.rfftfreq(total, d=1.0 / rate)
    phase = np.exp(-2j * np.pi * freqs * delay_s)
    if total % 2 == 0:
        # Nyquist coefficient must stay real for a real output.
        phase[-1] = phase[-1].real
    out = np.fft.irfft(spec * phase, n=total)
    return out[lead:lead + n]


def _source_position(source: SourceSpec, room: tuple) -> np.ndarray:
    center = np.array([room[0] / 2.0, room[1] / 2.0])
    ang = np.radians(source.aoa_deg)
    return center + source.distance_m * np.array([np.cos(ang), np.sin(ang)])


def _mic_positions(pose: ArrayPose, room: tuple) -> tuple:
    center = np.array([room[0] / 2.0, room[1] / 2.0])
    ang = np.radians(pose.orientation_deg)
    half = 0.5 * pose.spacing_m * np.array([np.cos(ang), np.sin(ang)])
    return center + half, center - half


def _reflection_coefficient(room: tuple, t60_s: float, wave_speed: float) -> float:
    # Eyring-style calibration on the 2-D mean free path pi*A/P.
    area = room[0] * room[1]
    perimeter = 2.0 * (room[0] + room[1])
    mfp = np.pi * area / perimeter
    return float(np.exp(-3.0 * np.log(10.0) * mfp / (wave_speed * t60_s)))


_TAP_HALF = 40


def _image_taps(src_pos, mic_pos, room, beta, r_max):
    """Image-source distances and reflection counts within radius r_max."""
    w, h = room
    n_max = int(np.ceil((r_max + max(w, h)) / (2.0 * min(w, h)))) + 1
    ns = np.arange(-n_max, n_max + 1)
    xs = np.concatenate([2 * ns * w + src_pos[0], 2 * ns * w - src_pos[0]])
    cx = np.concatenate([2 * np.abs(ns), np.abs(2 * ns - 1)])
    ys = np.concatenate([2 * ns * h + src_pos[1], 2 * ns * h - src_pos[1]])
    cy = np.concatenate([2 * np.abs(ns), np.abs(2 * ns - 1)])
    dx = xs - mic_pos[0]
    dy = ys - mic_pos[1]
    dist = np.sqrt(dx[:, None] ** 2 + dy[None, :] ** 2)
    counts = cx[:, None] + cy[None, :]
    keep = dist <= r_max
    if beta == 0.0:
        keep &= counts == 0
    return dist[keep], counts[keep]


def _build_rir(dist, counts, beta, ref_dist, rate, wave_speed, length):
    # cylindrical (1/sqrt r) spreading: in the 2-D image lattice this keeps
    # per-shell echo energy flat, so the tail decays by absorption alone
    # and Schroeder integration recovers the configured t60
    gains = (beta ** counts) * np.sqrt(ref_dist / np.maximum(dist, 1e-6))
    delays = (dist - ref_dist) / wave_speed * rate  # fractional samples
    rir = np.zeros(length + 2 * _TAP_HALF)
    base = np.floor(delays).astype(int)
    frac = delays - base
    k = np.arange(-_TAP_HALF, _TAP_HALF + 1)
    arg = k[None, :] - frac[:, None]
    taps = 0.9 * np.sinc(0.9 * arg)
    taps *= 0.5 + 0.5 * np.cos(np.pi * arg / (_TAP_HALF + 1))
    taps *= gains[:, None]
    pos = base[:, None] + k[None, :] + _TAP_HALF
    valid = (pos >= 0) & (pos < rir.size)
    np.add.at(rir, pos[valid], taps[valid])
    return rir[_TAP_HALF:_TAP_HALF + length]


def _room_rirs(scene: SceneConfig, pose: ArrayPose, src: SourceSpec):
    """Per-channel impulse responses, direct path at channel 1 normalized
    to unit gain and zero delay."""
    room = tuple(scene.room)
    rate = scene.rate
    v = pose.wave_speed
    t60 = scene.t60_ms / 1000.0
    src_pos = _source_position(src, room)
    mic1, mic2 = _mic_positions(pose, room)
    r1 = float(np.linalg.norm(src_pos - mic1))
    if t60 > 0:
        beta = _reflection_coefficient(room, t60, v)
        r_max = v * (1.1 * t60) + r1
    else:
        beta = 0.0
        r_max = r1 + v * 0.01 + max(room)
    length = int(np.ceil((r_max - r1) / v * rate)) + 2 * _TAP_HALF + 1
    out = []
    for mic in (mic1, mic2):
        dist, counts = _image_taps(src_pos, mic, room, beta, r_max)
        out.append(_build_rir(dist, counts, beta, r1, rate, v, length))
    return out


def _contributions(scene: SceneConfig, pose: ArrayPose):
    """Full-length per-source channel signals at this pose, gain-equalized.

    Cached per orientation so rotation sessions do not re-render.
    """
    key = round(pose.orientation_deg, 9)
    if key in scene._cache:
        return scene._cache[key]
    n = scene.n_samples
    rate = scene.rate
    per_source = []
    for src in scene.sources:
        x = src.waveform.samples[:n]
        if scene.room == "anechoic" or scene.t60_ms == 0:
            # a room with no reverberation contributes only the direct
            # path, which is the far-field anechoic model
            c1 = x.copy()
            c2 = fractional_delay(x, tdoa(src.aoa_deg, pose), rate)
            if scene.distance_gain:
                c1 = c1 / src.distance_m
                c2 = c2 / src.distance_m
        else:
            rir1, rir2 = _room_rirs(scene, pose, src)
            c1 = _signal.fftconvolve(x, rir1)[:n]
            c2 = _signal.fftconvolve(x, rir2)[:n]
        if scene.equalize:
            rms = np.sqrt(np.mean(c1 * c1))
            if rms < 1e-12:
                raise ValueError("a source renders silent; cannot equalize")
            c1 = c1 / rms
            c2 = c2 / rms
        per_source.append((c1, c2))
    scene._cache[key] = per_source
    return per_source


def _noise_for(scene: SceneConfig, shape, signal_power: float, noise_index: int):
    rng = np.random.default_rng([scene.seed, noise_index])
    raw = rng.standard_normal(shape)
    target = signal_power / 10.0 ** (scene.snr_db / 10.0)
    out = np.empty_like(raw)
    for ch in range(raw.shape[0]):
        power = np.mean(raw[ch] ** 2)
        out[ch] = raw[ch] * np.sqrt(target / power)
    return out


def render(scene: SceneConfig, pose: ArrayPose, start_s: float = 0.0,
           duration_s: float | None = None, noise_index: int = 0,
           sources: list | None = None, with_noise: bool = True) -> StereoCapture:
    """Render the scene at a fixed pose over a waveform window.

    Args:
        scene: scene description.
        pose: array pose held for the whole window.
        start_s: waveform time offset of the window.
        duration_s: window length; defaults to the rest of the waveforms.
        noise_index: seeds the noise draw (distinct windows get fresh noise).
        sources: optional subset of source indices to render.
        with_noise: set False for a noiseless render regardless of snr_db.

    Returns:
        StereoCapture with the measured channel SNR equal to scene.snr_db.
    """
    rate = scene.rate
    i0 = int(round(start_s * rate))
    if duration_s is None:
        i1 = scene.n_samples
    else:
        i1 = i0 + int(round(duration_s * rate))
    if i0 < 0 or i1 > scene.n_samples or i1 <= i0:
        raise ValueError(
            f"window [{start_s}, +{duration_s}] s exceeds waveform extent "
            f"({scene.n_samples / rate:.2f} s)"
        )
    per_source = _contributions(scene, pose)
    picks = range(len(per_source)) if sources is None else sources
    ch1 = np.zeros(i1 - i0)
    ch2 = np.zeros(i1 - i0)
    for idx in picks:
        c1, c2 = per_source[idx]
        ch1 += c1[i0:i1]
        ch2 += c2[i0:i1]
    if with_noise and scene.snr_db is not None:
        power = np.mean(ch1 * ch1)
        if power < 1e-20:
            power = np.mean(np.sum([c1 for c1, _ in per_source], axis=0) ** 2)
        noise = _noise_for(scene, (2, i1 - i0), power, noise_index)
        ch1 = ch1 + noise[0]
        ch2 = ch2 + noise[1]
    return StereoCapture(
        ch1=SampleBuffer(ch1, rate), ch2=SampleBuffer(ch2, rate), pose=pose
    )


def render_anechoic(scene: SceneConfig, pose: ArrayPose,
                    duration_s: float | None = None) -> StereoCapture:
    """Far-field plane-wave render (channel 2 delayed per source TDOA)."""
    if scene.room != "anechoic":
        raise ValueError("scene is configured with a room; use render_reverberant")
    return render(scene, pose, duration_s=duration_s)


def render_reverberant(scene: SceneConfig, pose: ArrayPose,
                       duration_s: float | None = None) -> StereoCapture:
    """Rectangular-room render via the 2-D image-source model."""
    if scene.room == "anechoic":
        raise ValueError("scene has no room geometry; use render_anechoic")
    return render(scene, pose, duration_s=duration_s)


def solo_reference(scene: SceneConfig, pose: ArrayPose, source_idx: int,
                   start_s: float = 0.0,
                   duration_s: float | None = None) -> SampleBuffer:
    """One source alone at the reference channel, no noise (ground truth)."""
    cap = render(scene, pose, start_s=start_s, duration_s=duration_s,
                 sources=[source_idx], with_noise=False)
    return cap.ch1


class SessionCapturer:
    """Stateful capture stream over a scene with a rotatable array.

    Source waveforms advance continuously across captures; rotating is
    instantaneous unless rotation_time_s is set, in which case that much
    waveform time elapses unrecorded per rotation.
    """

    def __init__(self, scene: SceneConfig, pose: ArrayPose,
                 rotation_time_s: float = 0.0):
        self.scene = scene
        self.pose = pose
        self.rotation_time_s = rotation_time_s
        self.cursor_s = 0.0
        self.capture_count = 0
        self.last_window = None

    def rotate_by(self, delta_deg: float) -> ArrayPose:
        self.pose = rotate_pose(self.pose, delta_deg)
        self.cursor_s += self.rotation_time_s
        return self.pose

    def rotate_to(self, orientation_deg: float) -> ArrayPose:
        return self.rotate_by(orientation_deg - self.pose.orientation_deg)

    def remaining_s(self) -> float:
        return self.scene.n_samples / self.scene.rate - self.cursor_s

    def capture(self, dwell_s: float) -> StereoCapture:
        cap = render(self.scene, self.pose, start_s=self.cursor_s,
                     duration_s=dwell_s, noise_index=self.capture_count)
        self.last_window = (self.cursor_s, dwell_s, self.pose)
        self.cursor_s += dwell_s
        self.capture_count += 1
        return cap

    def solo_reference(self, source_idx: int) -> SampleBuffer:
        """Ground-truth reference-channel solo for the last captured window."""
        if self.last_window is None:
            raise ValueError("no capture taken yet")
        start, dwell, pose = self.last_window
        return solo_reference(self.scene, pose, source_idx, start, dwell)


def capture_session(scene: SceneConfig, schedule: list,
                    pose: ArrayPose | None = None) -> list:
    """Capture at a list of (orientation_deg, dwell_s) stops in order."""
    if pose is None:
        pose = ArrayPose()
    capturer = SessionCapturer(scene, pose)
    captures = []
    for orientation, dwell in schedule:
        capturer.rotate_to(orientation)
        captures.append(capturer.capture(dwell))
    return captures


SCENE_JSON_VERSION = 1


def scene_to_json(scene: SceneConfig, synth_meta: list | None = None) -> str:
    """Serialize a scene; waveforms synthesized from seeds round-trip exactly.

    synth_meta holds one {"seed", "duration_s"} dict per source for
    synthesized waveforms; pass None if unknown (waveforms then cannot be
    reconstructed from the JSON).
    """
    doc = {
        "version": SCENE_JSON_VERSION,
        "room": scene.room if scene.room == "anechoic" else list(scene.room),
        "t60_ms": scene.t60_ms,
        "snr_db": scene.snr_db,
        "seed": scene.seed,
        "rate": scene.rate,
        "sources": [],
    }
    for i, src in enumerate(scene.sources):
        entry = {"aoa_deg": src.aoa_deg, "distance_m": src.distance_m}
        if synth_meta is not None:
            entry.update(synth_meta[i])
        doc["sources"].append(entry)
    return json.dumps(doc, indent=2)


def scene_from_json(text: str) -> SceneConfig:
    doc = json.loads(text)
    if doc.get("version") != SCENE_JSON_VERSION:
        raise ValueError(f"unsupported scene version {doc.get('version')!r}")
    rate = int(doc["rate"])
    sources = []
    for entry in doc["sources"]:
        if "seed" not in entry:
            raise ValueError("source entry lacks a synth seed")
        seed = entry["seed"]
        seed = [int(s) for s in seed] if isinstance(seed, list) else int(seed)
        wf = synth_speechlike(float(entry["duration_s"]), rate, seed)
        sources.append(SourceSpec(aoa_deg=float(entry["aoa_deg"]),
                                  distance_m=float(entry["distance_m"]),
                                  waveform=wf))
    room = doc["room"]
    return SceneConfig(
        sources=sources,
        room="anechoic" if room == "anechoic" else tuple(room),
        t60_ms=float(doc.get("t60_ms", 0.0)),
        snr_db=doc.get("snr_db"),
        seed=int(doc.get("seed", 0)),
    )
