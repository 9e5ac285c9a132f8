"""End-to-end rotating-array experiments: explore, align, separate, score."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .audio import SampleBuffer, StereoTFGrid, alias_cutoff_hz, band_select, \
    stft, synth_speechlike
from .aoa import circular_distance_deg, run_explore
from .itd import bin_itd, find_density_peaks, fit_kde
from .metrics import match_angles, pick_best, si_sdr, si_sdr_improvement
from .planner import AlignmentPlan, candidate_alignments, order_candidates
from .scene import ArrayPose, SceneConfig, SessionCapturer, SourceSpec, tdoa
from .separation import (delay_steering_init, duet_separate, iva_separate,
                         mvdr_beamform)

AOA_BANK = (170.0, 70.0, -50.0, -120.0, 10.0)
MODES = ("ross", "aoa_informed", "static_iva", "static_duet", "static_mvdr")
SWEEP_T60_MS = (0.0, 450.0, 700.0)


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one run end to end."""

    mode: str = "ross"
    n_sources: int = 3
    aoas_deg: list | None = None
    target_index: int = 1
    rate: int = 16000
    duration_s: float = 40.0
    snr_db: float | None = 15.0
    t60_ms: float = 0.0
    room_m: list | None = None
    distance_m: float = 2.5
    seed: int = 0
    initial_orientation_deg: float = 0.0
    rotation_step_deg: float = 15.0
    dwell_s: float = 2.0
    separate_dwell_s: float = 6.0
    rotation_time_s: float = 0.0
    explore_frame_len: int = 512
    separate_frame_len: int = 1024
    score_threshold: float = 0.7
    separator: str = "auto"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 2 <= self.n_sources <= len(AOA_BANK) and self.aoas_deg is None:
            raise ValueError(
                f"n_sources must be in [2, {len(AOA_BANK)}] unless aoas_deg "
                "is given"
            )
        if self.aoas_deg is None:
            self.aoas_deg = list(AOA_BANK[:self.n_sources])
        else:
            self.aoas_deg = [float(a) for a in self.aoas_deg]
            self.n_sources = len(self.aoas_deg)
        if not 0 <= self.target_index < self.n_sources:
            raise ValueError("target_index out of range")
        if self.separator not in ("auto", "iva", "duet", "mvdr"):
            raise ValueError(f"unknown separator {self.separator!r}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)


def build_scene(config: ExperimentConfig) -> SceneConfig:
    """Scene with per-source synthesized waveforms derived from the seed."""
    sources = [
        SourceSpec(
            aoa_deg=aoa,
            distance_m=config.distance_m,
            waveform=synth_speechlike(config.duration_s, config.rate,
                                      seed=[config.seed, 100 + i]),
        )
        for i, aoa in enumerate(config.aoas_deg)
    ]
    if config.room_m is not None:
        room = tuple(config.room_m)
    elif config.t60_ms > 0:
        room = (10.0, 10.0)
    else:
        room = "anechoic"
    return SceneConfig(
        sources=sources, room=room, t60_ms=config.t60_ms,
        snr_db=config.snr_db, seed=config.seed,
    )


def _dedup_delays(delays, tol_s: float = 1e-7) -> np.ndarray:
    kept = []
    for d in delays:
        if all(abs(d - k) > tol_s for k in kept):
            kept.append(float(d))
    return np.array(kept)


@dataclass
class ExploitResult:
    """Separated target after rotating to a planned orientation."""

    estimate: SampleBuffer
    mixture: SampleBuffer
    reference: SampleBuffer | None
    plan: AlignmentPlan
    score: float
    separator: str
    fallback: bool
    attempts: list = field(default_factory=list)


def run_exploit(session: SessionCapturer, aoas_deg, target_index: int,
                reference_idx: int | None = None,
                dwell_s: float = 6.0, check_s: float = 2.0,
                frame_len: int = 1024,
                score_threshold: float = 0.7,
                max_attempts: int | None = None,
                separator: str = "auto",
                iva_init: str = "steering",
                duet_excluded: str = "inherit") -> ExploitResult:
    """Rotate to candidate alignment poses until the target comes out clean.

    Tries planned orientations nearest rotation first. At each candidate
    a short check capture (check_s) is separated and scored against the
    solo reference when one is available (reference_idx). The first
    candidate at or above score_threshold wins and a longer run capture
    (dwell_s) at that pose produces the returned estimate; if no
    candidate qualifies the best-scoring one gets the run capture and
    fallback=True. Without a reference the first candidate is taken
    directly.

    With iva_init="steering" the blind separator starts from demixing
    matrices built out of the planned target and interferer delays, which
    is the point of aligning in the first place: at the planned pose the
    interferers collapse onto one delay, so two steering columns describe
    the whole mixture.
    """
    pose = session.pose
    max_itd = pose.max_itd
    k = len(aoas_deg)
    if max_attempts is None:
        max_attempts = max(1, k - 1)
    plans = order_candidates(
        candidate_alignments(target_index, aoas_deg, max_itd,
                             current_orientation_deg=pose.orientation_deg),
        pose.orientation_deg,
    )[:max_attempts]
    sep_name = separator if separator != "auto" else (
        "iva" if k <= 3 else "duet"
    )
    f_max = alias_cutoff_hz(pose.spacing_m, pose.wave_speed)

    def separate_here(plan, seconds):
        cap = session.capture(seconds)
        grid = StereoTFGrid(ch1=stft(cap.ch1, frame_len=frame_len),
                            ch2=stft(cap.ch2, frame_len=frame_len))
        if sep_name == "iva":
            w0 = None
            if iva_init == "steering" and len(plan.interferer_delays_s):
                d_int = float(np.mean(plan.interferer_delays_s))
                if abs(plan.target_delay_s - d_int) > 1e-9:
                    w0 = delay_steering_init(
                        grid.ch1.bin_freqs, [plan.target_delay_s, d_int]
                    )
            estimates = iva_separate(grid, init=w0).estimates
        elif sep_name == "duet":
            centers = _dedup_delays(
                [plan.target_delay_s, *plan.interferer_delays_s]
            )
            bgrid = band_select(grid, 50.0, f_max)
            estimates = duet_separate(bgrid, max_itd, centers_s=centers,
                                      excluded_bins=duet_excluded).estimates
        else:
            estimates = [mvdr_beamform(grid, plan.target_delay_s).estimate]
        reference = (session.solo_reference(reference_idx)
                     if reference_idx is not None else None)
        if reference is not None:
            idx, score = pick_best(estimates, reference)
        else:
            idx, score = 0, float("nan")
        return cap, estimates[idx], reference, score

    def finish(plan, fallback):
        # run phase: a fresh longer capture at the winning pose
        seconds = min(dwell_s, session.remaining_s())
        if seconds <= 0:
            raise ValueError("no capture budget left for the run phase")
        cap, estimate, reference, score = separate_here(plan, seconds)
        return ExploitResult(
            estimate=estimate, mixture=cap.ch1, reference=reference,
            plan=plan, score=score, separator=sep_name, fallback=fallback,
            attempts=attempts,
        )

    attempts = []
    best_plan = None
    best_score = -np.inf
    for plan in plans:
        if session.remaining_s() < check_s + dwell_s - 1e-9:
            break
        session.rotate_to(plan.theta_align)
        if reference_idx is None:
            return finish(plan, fallback=False)
        _, _, _, score = separate_here(plan, check_s)
        accepted = score >= score_threshold
        attempts.append({
            "orientation_deg": plan.theta_align,
            "min_gap_s": plan.min_itd_gap,
            "separator": sep_name,
            "score": score,
            "accepted": accepted,
        })
        if accepted:
            return finish(plan, fallback=False)
        if score > best_score:
            best_plan, best_score = plan, score
    if best_plan is None:
        raise ValueError("no capture budget left to attempt separation")
    session.rotate_to(best_plan.theta_align)
    return finish(best_plan, fallback=True)


@dataclass
class ExperimentResult:
    mode: str
    seed: int
    n_sources: int
    snr_db: float | None
    t60_ms: float
    target_index: int
    target_aoa_deg: float
    estimated_aoas_deg: list | None
    aoa_max_error_deg: float
    n_rotations: int
    total_rotation_deg: float
    capture_time_s: float
    initial_orientation_deg: float
    plan_orientation_deg: float
    separator: str
    score: float
    fallback: bool
    converged: bool | None
    si_sdr_db: float
    si_sdri_db: float
    wall_ms: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


CSV_COLUMNS = (
    "mode", "seed", "n_sources", "snr_db", "t60_ms", "target_index",
    "target_aoa_deg", "estimated_aoas_deg", "aoa_max_error_deg",
    "n_rotations", "total_rotation_deg", "capture_time_s",
    "initial_orientation_deg", "plan_orientation_deg", "separator",
    "score", "fallback", "si_sdr_db", "si_sdri_db", "converged",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return "" if np.isnan(value) else f"{value:.6f}"
    if isinstance(value, (list, tuple)):
        return "|".join(f"{float(v):.2f}" for v in value)
    return str(value)


def result_to_csv_row(result: ExperimentResult) -> list:
    # wall_ms stays out of the CSV so repeated runs are byte-identical.
    doc = result.to_dict()
    return [_fmt(doc[c]) for c in CSV_COLUMNS]


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """One full run of the configured mode, scored against ground truth."""
    t_start = time.perf_counter()
    scene = build_scene(config)
    pose = ArrayPose(orientation_deg=config.initial_orientation_deg)
    session = SessionCapturer(scene, pose,
                              rotation_time_s=config.rotation_time_s)
    true_aoas = config.aoas_deg
    target_true = true_aoas[config.target_index]
    estimated = None
    aoa_max_err = float("nan")
    n_rotations = 0
    total_rotation = 0.0
    converged = None
    plan_orientation = float("nan")
    fallback = False

    if config.mode in ("ross", "aoa_informed"):
        if config.mode == "ross":
            explore = run_explore(
                session, rotation_step_deg=config.rotation_step_deg,
                dwell_s=config.dwell_s,
                frame_len=config.explore_frame_len,
            )
            estimated = explore.aoas_deg
            n_rotations = explore.n_rotations
            total_rotation = explore.total_rotation_deg
            converged = explore.converged
            if estimated:
                pairs = match_angles(estimated, true_aoas)
                aoa_max_err = max(err for _, _, err in pairs)
                t_idx = int(np.argmin(
                    circular_distance_deg(np.asarray(estimated), target_true)
                ))
                plan_aoas, plan_target = estimated, t_idx
            else:
                # Exploration found nothing; fall back to the true angles
                # so the run still produces a separation attempt.
                plan_aoas, plan_target = true_aoas, config.target_index
        else:
            plan_aoas, plan_target = true_aoas, config.target_index
        exploit = run_exploit(
            session, plan_aoas, plan_target,
            reference_idx=config.target_index,
            dwell_s=config.separate_dwell_s, check_s=config.dwell_s,
            frame_len=config.separate_frame_len,
            score_threshold=config.score_threshold,
            separator=config.separator,
        )
        n_rotations += len(exploit.attempts)
        estimate = exploit.estimate
        mixture = exploit.mixture
        reference = exploit.reference
        score = exploit.score
        separator = exploit.separator
        fallback = exploit.fallback
        plan_orientation = exploit.plan.theta_align
    else:
        cap = session.capture(config.separate_dwell_s)
        reference = session.solo_reference(config.target_index)
        mixture = cap.ch1
        grid = StereoTFGrid(
            ch1=stft(cap.ch1, frame_len=config.separate_frame_len),
            ch2=stft(cap.ch2, frame_len=config.separate_frame_len),
        )
        f_max = alias_cutoff_hz(pose.spacing_m, pose.wave_speed)
        if config.mode == "static_iva":
            separator = "iva"
            estimates = iva_separate(grid).estimates
        elif config.mode == "static_duet":
            separator = "duet"
            bgrid = band_select(grid, 50.0, f_max)
            samples = bin_itd(bgrid, pose.max_itd)
            peaks = find_density_peaks(fit_kde(samples))
            n_centers = max(1, min(config.n_sources, len(peaks)))
            centers = np.array(
                [p.delay_s for p in peaks[:n_centers]]
            )
            estimates = duet_separate(bgrid, pose.max_itd, centers_s=centers,
                                      excluded_bins="inherit").estimates
        else:
            separator = "mvdr"
            delay = tdoa(target_true, pose)
            estimates = [mvdr_beamform(grid, delay).estimate]
        idx, score = pick_best(estimates, reference)
        estimate = estimates[idx]

    sdr = si_sdr(estimate, reference)
    sdri = si_sdr_improvement(estimate, reference, mixture)
    wall_ms = (time.perf_counter() - t_start) * 1000.0
    return ExperimentResult(
        mode=config.mode,
        seed=config.seed,
        n_sources=config.n_sources,
        snr_db=config.snr_db,
        t60_ms=config.t60_ms,
        target_index=config.target_index,
        target_aoa_deg=target_true,
        estimated_aoas_deg=estimated,
        aoa_max_error_deg=aoa_max_err,
        n_rotations=n_rotations,
        total_rotation_deg=total_rotation,
        capture_time_s=session.cursor_s,
        initial_orientation_deg=config.initial_orientation_deg,
        plan_orientation_deg=plan_orientation,
        separator=separator,
        score=score,
        fallback=fallback,
        converged=converged,
        si_sdr_db=sdr,
        si_sdri_db=sdri,
        wall_ms=wall_ms,
    )


def run_orientation_sweep(base: ExperimentConfig, n_orientations: int = 12,
                          mode: str = "static_iva",
                          include_planned: bool = True,
                          progress=None) -> list:
    """Separation quality as a function of fixed array orientation.

    Runs the given static mode at n_orientations uniformly spaced
    orientations (no rotation during a run), then optionally once more at
    the orientation the alignment planner would pick for the true AoAs.
    The planned run, when present, is the last result. Quantifies how
    much the choice of orientation matters and whether the planner finds
    the sweet spot.
    """
    pose = ArrayPose(orientation_deg=base.initial_orientation_deg)
    offsets = [i * 360.0 / n_orientations for i in range(n_orientations)]
    orientations = [
        float(base.initial_orientation_deg + off) for off in offsets
    ]
    if include_planned:
        plan = order_candidates(
            candidate_alignments(base.target_index, base.aoas_deg,
                                 pose.max_itd,
                                 current_orientation_deg=pose.orientation_deg),
            pose.orientation_deg,
        )[0]
        orientations.append(float(plan.theta_align))
    results = []
    for orientation in orientations:
        doc = base.to_dict()
        doc.update(mode=mode, initial_orientation_deg=orientation)
        result = run_experiment(ExperimentConfig.from_dict(doc))
        results.append(result)
        if progress is not None:
            progress(result)
    return results


def run_t60_grid(base: ExperimentConfig, t60_values=SWEEP_T60_MS,
                 modes=MODES, seeds=(0, 1, 2), progress=None) -> list:
    """Grid of runs over reverberation levels, modes and seeds.

    Loop order (t60, mode, seed) is fixed so output rows are reproducible.
    """
    results = []
    for t60 in t60_values:
        for mode in modes:
            for seed in seeds:
                doc = base.to_dict()
                doc.update(mode=mode, t60_ms=float(t60), seed=int(seed),
                           room_m=doc["room_m"] or ([10.0, 10.0] if t60 > 0
                                                    else None))
                config = ExperimentConfig.from_dict(doc)
                result = run_experiment(config)
                results.append(result)
                if progress is not None:
                    progress(result)
    return results


def write_results_csv(results, path) -> None:
    """Deterministic CSV: fixed columns, fixed float formats, no wall time."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for result in results:
            writer.writerow(result_to_csv_row(result))


def summarize_results(results) -> dict:
    """Aggregate separation quality per (mode, t60) cell."""
    cells: dict = {}
    for r in results:
        key = (r.mode, r.t60_ms)
        cells.setdefault(key, []).append(r)
    aggregates = []
    for (mode, t60), rows in sorted(cells.items()):
        sdri = [r.si_sdri_db for r in rows]
        scores = [r.score for r in rows if not np.isnan(r.score)]
        aggregates.append({
            "mode": mode,
            "t60_ms": t60,
            "n_runs": len(rows),
            "mean_si_sdri_db": float(np.mean(sdri)),
            "min_si_sdri_db": float(np.min(sdri)),
            "mean_score": float(np.mean(scores)) if scores else None,
            "n_fallback": sum(1 for r in rows if r.fallback),
        })
    return {
        "n_results": len(results),
        "total_wall_ms": float(sum(r.wall_ms for r in results)),
        "aggregates": aggregates,
    }


def write_summary_json(results, path, config: ExperimentConfig | None = None
                       ) -> None:
    doc = summarize_results(results)
    if config is not None:
        doc["base_config"] = config.to_dict()
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
