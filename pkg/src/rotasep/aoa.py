"""Angle-of-arrival estimation by rotating the array and testing which
mirror hypothesis tracks the delay density."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import KMeans

from .audio import StereoTFGrid, alias_cutoff_hz, band_select, stft
from .itd import (ItdDensity, bin_itd, emphasize_high_freq,
                  find_density_peaks, fit_kde)


def circular_distance_deg(a, b) -> np.ndarray:
    """Shortest angular distance in degrees, in [0, 180]."""
    d = np.abs((np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
               % 360.0)
    return np.minimum(d, 360.0 - d)


def circular_mean_deg(angles_deg, weights=None) -> float:
    ang = np.radians(np.asarray(angles_deg, dtype=float))
    if weights is None:
        weights = np.ones_like(ang)
    w = np.asarray(weights, dtype=float)
    s = float(np.sum(w * np.sin(ang)))
    c = float(np.sum(w * np.cos(ang)))
    if s == 0.0 and c == 0.0:
        raise ValueError("circular mean undefined for balanced angles")
    out = np.degrees(np.arctan2(s, c))
    return 180.0 if out <= -180.0 else float(out)


def itd_to_local_pair(delay_s: float, max_itd_s: float) -> tuple:
    """Both local angles consistent with a delay: (+theta, -theta).

    A single delay measurement cannot tell the two sides of the array
    axis apart. Delays beyond the physical support are clipped first.
    """
    ratio = np.clip(delay_s / max_itd_s, -1.0, 1.0)
    theta = float(np.degrees(np.arccos(ratio)))
    return theta, -theta


def predict_itd(local_deg: float, rotation_deg: float,
                max_itd_s: float) -> float:
    """Delay this source would show after the array rotates by rotation_deg."""
    return max_itd_s * float(np.cos(np.radians(local_deg - rotation_deg)))


@dataclass(frozen=True)
class HypothesisResult:
    chosen_local_deg: float
    rejected_local_deg: float
    predicted_keep_s: float
    predicted_flip_s: float
    score_keep: float
    score_flip: float
    decided: bool
    reason: str


def hypothesis_select(density_after: ItdDensity, local_pair: tuple,
                      rotation_deg: float, max_itd_s: float,
                      degenerate_eps_s: float = 1e-9) -> HypothesisResult:
    """Pick the mirror hypothesis whose predicted delay lands on more
    density mass after the rotation.

    When the two predictions coincide (source on the axis, or a rotation
    that maps both mirrors to the same delay) no evidence can separate
    them and the result is flagged undecided.
    """
    theta_p, theta_m = local_pair
    pred_p = predict_itd(theta_p, rotation_deg, max_itd_s)
    pred_m = predict_itd(theta_m, rotation_deg, max_itd_s)
    if abs(pred_p - pred_m) < degenerate_eps_s:
        return HypothesisResult(theta_p, theta_m, pred_p, pred_m,
                                np.nan, np.nan, False, "degenerate")
    scores = density_after.evaluate([pred_p, pred_m])
    s_p, s_m = float(scores[0]), float(scores[1])
    if abs(s_p - s_m) <= 1e-12 * max(abs(s_p), abs(s_m), 1e-300):
        return HypothesisResult(theta_p, theta_m, pred_p, pred_m,
                                s_p, s_m, False, "score_tie")
    if s_p > s_m:
        return HypothesisResult(theta_p, theta_m, pred_p, pred_m,
                                s_p, s_m, True, "ok")
    return HypothesisResult(theta_m, theta_p, pred_p, pred_m,
                            s_p, s_m, True, "ok")


@dataclass(frozen=True)
class AoaCandidate:
    """One vote for a global source direction, produced by one rotation."""

    global_deg: float
    local_deg: float
    peak_delay_s: float
    weight: float
    decided: bool
    reason: str


def explore_step(density_before: ItdDensity, density_after: ItdDensity,
                 rotation_deg: float, orientation_before_deg: float,
                 max_itd_s: float, peaks=None, **peak_kwargs) -> list:
    """Turn each delay peak seen before a rotation into an AoA vote.

    Undecided peaks (degenerate geometry) still appear in the output with
    decided=False so callers can exclude them from clustering but keep
    the bookkeeping.

    Vote weight is peak height scaled by |sin(local angle)|: the
    delay-to-angle map has slope 1/(max_itd*sin theta), so near-endfire
    peaks carry little angular information. The scaling also zeroes out
    pileup artifacts sitting exactly at the delay support boundary.
    """
    if peaks is None:
        peaks = find_density_peaks(density_before, **peak_kwargs)
    out = []
    for peak in peaks:
        pair = itd_to_local_pair(peak.delay_s, max_itd_s)
        sel = hypothesis_select(density_after, pair, rotation_deg, max_itd_s)
        global_deg = _norm(sel.chosen_local_deg + orientation_before_deg)
        angular_gain = abs(np.sin(np.radians(sel.chosen_local_deg)))
        out.append(AoaCandidate(
            global_deg=global_deg,
            local_deg=sel.chosen_local_deg,
            peak_delay_s=peak.delay_s,
            weight=peak.height * angular_gain,
            decided=sel.decided,
            reason=sel.reason,
        ))
    return out


def _norm(deg: float) -> float:
    wrapped = -((-float(deg) + 180.0) % 360.0 - 180.0)
    return 180.0 if wrapped == -180.0 else wrapped


@dataclass
class AoaClusters:
    centers_deg: list
    labels: np.ndarray
    k: int
    spread_deg: list
    weight_share: list


def cluster_aoas(angles_deg, weights=None, k_max: int = 8,
                 elbow_drop: float = 0.10, min_weight_frac: float = 0.05,
                 trim_deg: float = 10.0,
                 random_state: int = 0) -> AoaClusters:
    """Group AoA votes on the circle and estimate how many sources they show.

    Runs k-means on unit-circle embeddings for k = 1, 2, ... and picks the
    smallest k where adding one more cluster lowers the weighted inertia
    by less than elbow_drop of the single-cluster inertia. Normalizing the
    drop by the k=1 inertia makes the rule terminate: once the real
    clusters are carved out, splitting a tight cluster releases only a
    tiny fraction of the total variance. Clusters holding under
    min_weight_frac of the total weight are discarded as ghosts, so k
    reflects supported directions only.

    Cluster centers are trimmed weighted circular means: member votes
    further than trim_deg from the provisional mean are dropped and the
    mean recomputed, so a stray vote absorbed into a real cluster cannot
    drag its center.
    """
    angles = np.asarray(angles_deg, dtype=float)
    if angles.size == 0:
        return AoaClusters([], np.array([], dtype=int), 0, [], [])
    w = (np.ones_like(angles) if weights is None
         else np.asarray(weights, dtype=float))
    pts = np.column_stack([np.cos(np.radians(angles)),
                           np.sin(np.radians(angles))])
    n_distinct = np.unique(np.round(angles, 6)).size
    k_cap = min(k_max, n_distinct)
    fits = {}

    def fit(k):
        if k not in fits:
            km = KMeans(n_clusters=k, n_init=10, random_state=random_state)
            labels = km.fit_predict(pts, sample_weight=w)
            fits[k] = (labels, float(km.inertia_))
        return fits[k]

    _, inertia_total = fit(1)
    chosen = k_cap
    for k in range(1, k_cap):
        _, here = fit(k)
        _, there = fit(k + 1)
        if here <= 0 or (here - there) < elbow_drop * inertia_total:
            chosen = k
            break
    labels, _ = fit(chosen)
    centers = []
    spreads = []
    for c in range(chosen):
        m = labels == c
        if not np.any(m):
            centers.append(np.nan)
            spreads.append(np.inf)
            continue
        # Seed the center at the member with the most weight within
        # trim_deg of itself (a crude mode), not at the weighted mean: a
        # bimodal cluster would otherwise average into empty space and
        # the trim below could latch onto the wrong lobe.
        local_mass = [
            float(np.sum(w[m][circular_distance_deg(angles[m], a) <= trim_deg]))
            for a in angles[m]
        ]
        center = float(angles[m][int(np.argmax(local_mass))])
        for _ in range(2):
            dev = circular_distance_deg(angles[m], center)
            inliers = dev <= trim_deg
            if not np.any(inliers):
                break
            center = circular_mean_deg(angles[m][inliers], w[m][inliers])
        dev = circular_distance_deg(angles[m], center)
        centers.append(center)
        spreads.append(float(np.sum(w[m] * dev) / np.sum(w[m])))
    total_w = float(w.sum())
    keep = []
    shares = []
    for c, center in enumerate(centers):
        share = float(w[labels == c].sum() / total_w)
        if share >= min_weight_frac and np.isfinite(center):
            keep.append((center, spreads[c], share))
    keep.sort(key=lambda t: t[0])
    return AoaClusters(
        centers_deg=[t[0] for t in keep],
        labels=labels,
        k=len(keep),
        spread_deg=[t[1] for t in keep],
        weight_share=[t[2] for t in keep],
    )


@dataclass
class ExploreResult:
    """Outcome of a rotate-and-listen exploration session."""

    aoas_deg: list
    k: int
    n_rotations: int
    total_rotation_deg: float
    candidates: list
    trace: list = field(default_factory=list)
    converged: bool = False

    def to_dict(self) -> dict:
        return {
            "aoas_deg": list(self.aoas_deg),
            "k": self.k,
            "n_rotations": self.n_rotations,
            "total_rotation_deg": self.total_rotation_deg,
            "converged": self.converged,
            "trace": self.trace,
        }


def run_explore(session, rotation_step_deg: float = 15.0,
                dwell_s: float = 2.0, frame_len: int = 512,
                power_floor_db: float = -35.0, band_hz=None,
                kde_bandwidth_s: float | None = None,
                freq_emphasis: float = 1.0,
                k_max: int = 8, stable_steps: int = 2,
                spread_gate_deg: float = 12.0,
                max_total_rotation_deg: float = 180.0,
                peak_kwargs: dict | None = None,
                cluster_kwargs: dict | None = None) -> ExploreResult:
    """Estimate every source direction by repeated small rotations.

    Protocol: capture, rotate by rotation_step_deg, capture again; every
    delay peak from the previous pose votes for the mirror hypothesis
    that better explains the new density. Votes pool across steps and are
    re-clustered after each one. The loop ends once the cluster count has
    held still for stable_steps consecutive steps, or when the cumulative
    rotation would exceed max_total_rotation_deg (the delay map repeats
    every half turn, so further rotation adds no new view).

    freq_emphasis tilts sample weights toward high-frequency bins, whose
    delay estimates are intrinsically tighter (see emphasize_high_freq).
    Without it, noisy low-frequency bins smear each source's delay
    cluster until neighbouring clusters blur together and peaks go
    missing. kde_bandwidth_s=None uses the automatic bandwidth.

    The stop rule counts a step as stable only when the cluster count
    matches the previous step and every cluster is reasonably tight
    (weighted spread at most spread_gate_deg); a loose cluster usually
    means two sources are still riding in one cluster, so stopping there
    would freeze a wrong k.

    The session object must expose pose, rotate_by(deg) and
    capture(dwell_s) (see SessionCapturer).
    """
    peak_kwargs = dict(peak_kwargs or {})
    cluster_kwargs = dict(cluster_kwargs or {})
    pose = session.pose
    max_itd = pose.max_itd
    if band_hz is None:
        band_hz = (50.0, alias_cutoff_hz(pose.spacing_m, pose.wave_speed))

    def analyze(capture):
        pair = StereoTFGrid(ch1=stft(capture.ch1, frame_len=frame_len),
                            ch2=stft(capture.ch2, frame_len=frame_len))
        grid = band_select(pair, band_hz[0], band_hz[1])
        samples = bin_itd(grid, max_itd, power_floor_db=power_floor_db)
        samples = emphasize_high_freq(samples, power=freq_emphasis)
        return fit_kde(samples, bandwidth_s=kde_bandwidth_s)

    density_prev = analyze(session.capture(dwell_s))
    candidates: list = []
    trace: list = []
    k_prev = -1
    stable_run = 0
    n_rotations = 0
    total_rotation = 0.0
    converged = False
    clusters = AoaClusters([], np.array([], dtype=int), 0, [], [])
    while total_rotation + rotation_step_deg <= max_total_rotation_deg + 1e-9:
        orientation_before = session.pose.orientation_deg
        session.rotate_by(rotation_step_deg)
        n_rotations += 1
        total_rotation += rotation_step_deg
        density_now = analyze(session.capture(dwell_s))
        step_votes = explore_step(
            density_prev, density_now, rotation_step_deg,
            orientation_before, max_itd, **peak_kwargs,
        )
        candidates.extend(step_votes)
        decided = [c for c in candidates if c.decided]
        if decided:
            clusters = cluster_aoas(
                [c.global_deg for c in decided],
                weights=[c.weight for c in decided],
                k_max=k_max, **cluster_kwargs,
            )
        tight = bool(clusters.spread_deg
                     and max(clusters.spread_deg) <= spread_gate_deg)
        if clusters.k > 0 and clusters.k == k_prev and tight:
            stable_run += 1
        else:
            stable_run = 0
        k_prev = clusters.k
        trace.append({
            "rotation": n_rotations,
            "orientation_before_deg": orientation_before,
            "orientation_after_deg": session.pose.orientation_deg,
            "n_peaks": len(step_votes),
            "votes": [
                {"global_deg": v.global_deg, "local_deg": v.local_deg,
                 "peak_delay_s": v.peak_delay_s, "weight": v.weight,
                 "decided": v.decided, "reason": v.reason}
                for v in step_votes
            ],
            "k_estimate": clusters.k,
            "centers_deg": list(clusters.centers_deg),
        })
        density_prev = density_now
        if stable_run >= stable_steps:
            converged = True
            break
    return ExploreResult(
        aoas_deg=list(clusters.centers_deg),
        k=clusters.k,
        n_rotations=n_rotations,
        total_rotation_deg=total_rotation,
        candidates=candidates,
        trace=trace,
        converged=converged,
    )
