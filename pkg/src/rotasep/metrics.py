"""Scoring separated signals and estimated directions against ground truth."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .aoa import circular_distance_deg

SDR_CAP_DB = 60.0


def _common(a, b):
    x = a.samples if hasattr(a, "samples") else np.asarray(a, dtype=float)
    y = b.samples if hasattr(b, "samples") else np.asarray(b, dtype=float)
    n = min(x.size, y.size)
    if n == 0:
        raise ValueError("empty signal")
    return x[:n], y[:n]


def si_sdr(estimate, reference) -> float:
    """Scale-invariant signal-to-distortion ratio in dB.

    The reference is rescaled to its least-squares fit of the estimate
    before computing the ratio, so gain differences do not count as
    distortion. Clipped to +/-60 dB: beyond that the residual is
    numerically meaningless.
    """
    est, ref = _common(estimate, reference)
    ref_energy = float(np.dot(ref, ref))
    if ref_energy <= 0:
        raise ValueError("reference is silent")
    alpha = float(np.dot(est, ref)) / ref_energy
    target = alpha * ref
    noise = est - target
    num = float(np.dot(target, target))
    den = float(np.dot(noise, noise))
    if den <= num * 10.0 ** (-SDR_CAP_DB / 10.0):
        return SDR_CAP_DB
    if num <= den * 10.0 ** (-SDR_CAP_DB / 10.0):
        return -SDR_CAP_DB
    return float(10.0 * np.log10(num / den))


def si_sdr_improvement(estimate, reference, mixture) -> float:
    """How much the estimate gains over just listening to the mixture."""
    return si_sdr(estimate, reference) - si_sdr(mixture, reference)


def correlation_score(estimate, reference) -> float:
    """Absolute centered correlation, in [0, 1]; 1 means same waveform."""
    est, ref = _common(estimate, reference)
    est = est - est.mean()
    ref = ref - ref.mean()
    denom = np.sqrt(float(np.dot(est, est)) * float(np.dot(ref, ref)))
    if denom <= 0:
        return 0.0
    return float(abs(np.dot(est, ref)) / denom)


def pick_best(estimates, reference) -> tuple:
    """Index and score of the estimate most correlated with a reference."""
    scores = [correlation_score(e, reference) for e in estimates]
    idx = int(np.argmax(scores))
    return idx, scores[idx]


def match_sources(estimates, references) -> list:
    """Best one-to-one pairing of estimates to references.

    Returns (estimate_idx, reference_idx, score) triples maximizing the
    total correlation score; unmatched extras are left out.
    """
    score = np.array([
        [correlation_score(e, r) for r in references] for e in estimates
    ])
    rows, cols = linear_sum_assignment(-score)
    return [(int(i), int(j), float(score[i, j])) for i, j in zip(rows, cols)]


def match_angles(estimated_deg, true_deg) -> list:
    """Pair estimated and true directions minimizing total circular error.

    Returns (estimate_idx, truth_idx, error_deg) triples; if the counts
    differ, the surplus on either side stays unmatched.
    """
    est = np.asarray(estimated_deg, dtype=float)
    tru = np.asarray(true_deg, dtype=float)
    if est.size == 0 or tru.size == 0:
        return []
    cost = circular_distance_deg(est[:, None], tru[None, :])
    rows, cols = linear_sum_assignment(cost)
    return [(int(i), int(j), float(cost[i, j])) for i, j in zip(rows, cols)]
