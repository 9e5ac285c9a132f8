"""Numerical laboratory for source separation with a rotating
two-microphone array.

A compact pipeline: simulate speech-like sources around a rotatable
stereo pair, read inter-channel delays off time-frequency bins, resolve
the mirror ambiguity by rotating, plan an orientation that pushes every
interferer away from the target's delay, then separate and score.
"""

from .audio import (
    SampleBuffer,
    StereoTFGrid,
    TFGrid,
    alias_cutoff_hz,
    band_select,
    istft,
    load_wav,
    stft,
    synth_speechlike,
    write_wav,
)
from .scene import (
    ArrayPose,
    SceneConfig,
    SessionCapturer,
    SourceSpec,
    StereoCapture,
    capture_session,
    fractional_delay,
    normalize_angle,
    render,
    render_anechoic,
    render_reverberant,
    rotate_pose,
    scene_from_json,
    scene_to_json,
    solo_reference,
    tdoa,
)
from .itd import (
    DensityPeak,
    ItdDensity,
    ItdSamples,
    bin_itd,
    emphasize_high_freq,
    find_density_peaks,
    fit_kde,
    merge_itd_samples,
)
from .aoa import (
    AoaCandidate,
    AoaClusters,
    ExploreResult,
    circular_distance_deg,
    circular_mean_deg,
    cluster_aoas,
    explore_step,
    hypothesis_select,
    itd_to_local_pair,
    predict_itd,
    run_explore,
)
from .planner import (
    AlignmentPlan,
    alignment_gap,
    axis_distance_deg,
    bisector_angle,
    candidate_alignments,
    general_alignment,
    order_candidates,
    pair_axis,
)
from .separation import (
    DuetResult,
    IvaResult,
    MvdrResult,
    delay_steering_init,
    duet_separate,
    independence_check,
    iva_separate,
    mvdr_beamform,
)
from .metrics import (
    correlation_score,
    match_angles,
    match_sources,
    pick_best,
    si_sdr,
    si_sdr_improvement,
)
from .pipeline import (
    AOA_BANK,
    MODES,
    SWEEP_T60_MS,
    ExperimentConfig,
    ExperimentResult,
    ExploitResult,
    build_scene,
    run_experiment,
    run_exploit,
    run_orientation_sweep,
    run_t60_grid,
    summarize_results,
    write_results_csv,
    write_summary_json,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
