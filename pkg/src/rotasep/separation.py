"""Two-channel source separation: independent vector analysis, delay
clustering masks, and a distortionless beamformer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import SampleBuffer, StereoTFGrid, TFGrid, istft
from .itd import ItdSamples, fit_kde, find_density_peaks


def _grid_like(template: TFGrid, coefficients: np.ndarray) -> TFGrid:
    return TFGrid(
        coefficients=coefficients,
        frame_len=template.frame_len,
        hop=template.hop,
        rate=template.rate,
        n_samples=template.n_samples,
        window=template.window,
        lead_pad=template.lead_pad,
        bin_mask=template.bin_mask,
    )


def project_onto_reference(rows: np.ndarray, ref_rows: np.ndarray) -> np.ndarray:
    """Per-frequency least-squares rescaling of separated rows onto a
    reference channel. The residual ref - alpha*y is orthogonal to y at
    every frequency, which pins down the arbitrary per-source scale."""
    energy = (np.abs(rows) ** 2).sum(axis=-1)
    cross = (ref_rows * np.conj(rows)).sum(axis=-1)
    alpha = np.where(energy > 1e-30, cross / np.maximum(energy, 1e-30), 0.0)
    return alpha[:, None] * rows


@dataclass
class IvaResult:
    estimates: list
    demix: np.ndarray
    n_iterations: int
    converged: bool
    loss_history: np.ndarray


def delay_steering_init(freqs_hz, delays_s, ridge: float = 1e-3,
                        blend_threshold: float = 0.3) -> np.ndarray:
    """Initial demixing matrices from hypothesized per-source delays.

    Source k is modelled as arriving with relative delay delays_s[k] on
    channel 2, i.e. mixing column [1, exp(-2 pi i f d_k)]. The returned
    (F, 2, 2) stack is the ridge-regularized inverse of that mixing
    guess. At frequencies where the two columns nearly line up
    (f*(d0-d1) near an integer, |det| below blend_threshold) the inverse
    degenerates toward rank one, so it is blended with the identity to
    stay usable as a starting point.
    """
    f = np.asarray(freqs_hz, dtype=float)
    d = np.asarray(delays_s, dtype=float)
    if d.shape != (2,):
        raise ValueError("exactly two delay hypotheses required")
    phase = np.exp(-2j * np.pi * f[:, None] * d[None, :])  # (F, 2)
    A = np.stack(
        [np.ones_like(phase), phase], axis=1
    ).astype(np.complex128)  # (F, 2, 2): rows channels, cols sources
    Ah = np.conj(np.swapaxes(A, 1, 2))
    gram = Ah @ A
    lam = ridge * np.trace(gram, axis1=1, axis2=2).real[:, None, None] / 2.0
    eye = np.eye(2, dtype=np.complex128)
    inv = np.linalg.solve(gram + lam * eye, Ah)
    det = phase[:, 1] - phase[:, 0]  # det(A), zero when columns align
    alpha = np.clip(np.abs(det) / blend_threshold, 0.0, 1.0)[:, None, None]
    return alpha * inv + (1.0 - alpha) * eye


def iva_separate(grid: StereoTFGrid, n_iterations: int = 60,
                 tol: float = 1e-6,
                 init: np.ndarray | None = None) -> IvaResult:
    """Frequency-domain blind separation with a spherical contrast.

    Auxiliary-function update: each sweep rebuilds, for every output, a
    weighted covariance of the input (weights 1/r with r the per-frame
    vector norm of that output across frequency) and solves for the
    demixing row in closed form. No step size; the objective is
    monotonically non-increasing. The per-frame norm coupling is what
    ties frequencies together and avoids per-frequency permutation
    ambiguity.

    init, when given, is an (F, 2, 2) stack of starting demixing
    matrices (see delay_steering_init); identity otherwise. A steering
    init speeds up convergence and fixes the output order to match the
    hypothesized sources.

    Outputs are rescaled onto channel 1 and resynthesized, so the two
    returned estimates sum roughly to channel 1.
    """
    x1 = grid.ch1.coefficients.T  # (F, T)
    x2 = grid.ch2.coefficients.T
    Xf = np.stack([x1, x2], axis=1).astype(np.complex128)  # (F, 2, T)
    n_freq, _, n_frames = Xf.shape
    frame_norm = np.sqrt((np.abs(Xf) ** 2).sum(axis=0))  # (2, T)
    scale = float(frame_norm.mean())
    if scale <= 0:
        raise ValueError("empty input grid")
    Xs = Xf / scale

    if init is None:
        W = np.tile(np.eye(2, dtype=np.complex128), (n_freq, 1, 1))
    else:
        if init.shape != (n_freq, 2, 2):
            raise ValueError(f"init must have shape {(n_freq, 2, 2)}")
        W = init.astype(np.complex128).copy()

    def objective(Wc, r):
        dets = np.abs(np.linalg.det(Wc))
        return float((2.0 * r).sum(axis=0).mean()
                     - 2.0 * np.log(np.maximum(dets, 1e-300)).sum())

    eyes = np.eye(2, dtype=np.complex128)
    losses = []
    converged = False
    it = 0
    for it in range(1, n_iterations + 1):
        Y = W @ Xs
        r = np.sqrt((np.abs(Y) ** 2).sum(axis=0))  # (2, T)
        losses.append(objective(W, r))
        W_prev = W.copy()
        for k in range(2):
            wgt = 1.0 / np.maximum(r[k], 1e-10)  # (T,)
            V = np.einsum("fit,t,fjt->fij", Xs, wgt, np.conj(Xs)) / n_frames
            # load keeps W @ V invertible at silent or degenerate bins
            load = 1e-8 * np.trace(V, axis1=1, axis2=2).real
            V = V + np.maximum(load, 1e-30)[:, None, None] * eyes
            rhs = np.tile(eyes[:, k], (n_freq, 1))[:, :, None]
            wk = np.linalg.solve(W @ V, rhs)[:, :, 0]
            quad = np.einsum("fi,fij,fj->f", np.conj(wk), V, wk).real
            wk = wk / np.sqrt(np.maximum(quad, 1e-30))[:, None]
            W[:, k, :] = np.conj(wk)
        step = np.linalg.norm(W - W_prev, axis=(1, 2)) / np.maximum(
            np.linalg.norm(W_prev, axis=(1, 2)), 1e-30
        )
        if float(step.mean()) < tol:
            converged = True
            break

    Y = W @ Xs
    estimates = []
    for k in range(2):
        rows = project_onto_reference(Y[:, k, :], x1)
        estimates.append(istft(_grid_like(grid.ch1, rows.T)))
    return IvaResult(
        estimates=estimates,
        demix=W,
        n_iterations=it,
        converged=converged,
        loss_history=np.asarray(losses),
    )


@dataclass
class DuetResult:
    estimates: list
    masks: np.ndarray
    centers_s: np.ndarray
    assignment: np.ndarray


def duet_separate(grid: StereoTFGrid, max_itd_s: float,
                  n_sources: int | None = None,
                  centers_s=None,
                  excluded_bins: str = "inherit") -> DuetResult:
    """Binary time-frequency masking by per-bin delay.

    Every usable bin gets a delay estimate and is assigned to the nearest
    delay center; the resulting binary masks partition the usable bins
    exactly. Centers come from the caller (e.g. predicted delays at the
    current pose) or, if omitted, from the tallest n_sources modes of the
    pooled delay density.

    Rows outside the usable set (DC, or rows dropped by a band mask)
    either inherit the assignment of the nearest usable frequency row
    ("inherit") or go to no source ("zero").
    """
    if excluded_bins not in ("inherit", "zero"):
        raise ValueError("excluded_bins must be 'inherit' or 'zero'")
    x1 = grid.ch1.coefficients.T  # (F, T)
    x2 = grid.ch2.coefficients.T
    freqs = grid.ch1.bin_freqs
    rows = freqs > 0
    if grid.ch1.bin_mask is not None:
        rows &= grid.ch1.bin_mask
    row_idx = np.flatnonzero(rows)
    if row_idx.size == 0:
        raise ValueError("no usable frequency rows")
    f = freqs[row_idx][:, None]
    delta = -np.angle(x2[row_idx] * np.conj(x1[row_idx])) / (2.0 * np.pi * f)
    delta = np.clip(delta, -max_itd_s, max_itd_s)

    if centers_s is None:
        if n_sources is None:
            raise ValueError("need n_sources when centers_s is not given")
        weights = (np.abs(x1[row_idx]) * np.abs(x2[row_idx])).ravel()
        samples = ItdSamples(
            delays=delta.ravel(), weights=weights,
            freqs_hz=np.broadcast_to(f, delta.shape).ravel(),
            max_itd=max_itd_s,
        )
        peaks = find_density_peaks(fit_kde(samples))
        if len(peaks) < n_sources:
            raise ValueError(
                f"delay density shows {len(peaks)} modes, need {n_sources}"
            )
        centers_s = np.array([p.delay_s for p in peaks[:n_sources]])
    centers_s = np.asarray(centers_s, dtype=np.float64)
    n_src = centers_s.size

    local = np.argmin(np.abs(delta[..., None] - centers_s), axis=-1)
    n_rows, n_frames = x1.shape
    assignment = np.full((n_rows, n_frames), -1, dtype=np.int64)
    assignment[row_idx] = local
    if excluded_bins == "inherit":
        excluded = np.setdiff1d(np.arange(n_rows), row_idx)
        if excluded.size:
            nearest = row_idx[np.argmin(
                np.abs(excluded[:, None] - row_idx[None, :]), axis=1
            )]
            assignment[excluded] = assignment[nearest]

    masks = np.stack([assignment == k for k in range(n_src)])
    estimates = [
        istft(_grid_like(grid.ch1, np.where(masks[k], x1, 0.0).T))
        for k in range(n_src)
    ]
    return DuetResult(
        estimates=estimates, masks=masks,
        centers_s=centers_s, assignment=assignment,
    )


@dataclass
class MvdrResult:
    estimate: SampleBuffer
    weights: np.ndarray


def mvdr_beamform(grid: StereoTFGrid, target_delay_s: float,
                  diagonal_loading: float = 1e-3) -> MvdrResult:
    """Minimum-variance beamformer steered at a known inter-channel delay.

    Per frequency: w = R^-1 a / (a^H R^-1 a) with a = [1, exp(-2j pi f
    tau)], R the sample covariance plus relative diagonal loading. The
    target direction passes with unit gain (w^H a = 1) while correlated
    energy from elsewhere is minimized.
    """
    x1 = grid.ch1.coefficients.T  # (F, T)
    x2 = grid.ch2.coefficients.T
    X = np.stack([x1, x2], axis=1)  # (F, 2, T)
    n_freq, _, n_frames = X.shape
    R = np.einsum("fit,fjt->fij", X, np.conj(X)) / n_frames
    trace = np.real(R[:, 0, 0] + R[:, 1, 1])
    load = diagonal_loading * np.maximum(trace, 1e-30) / 2.0
    R = R + load[:, None, None] * np.eye(2)
    freqs = grid.ch1.bin_freqs
    a = np.stack(
        [np.ones_like(freqs, dtype=np.complex128),
         np.exp(-2j * np.pi * freqs * target_delay_s)], axis=1
    )  # (F, 2)
    Ra = np.linalg.solve(R, a[..., None])[..., 0]  # (F, 2)
    denom = np.einsum("fi,fi->f", np.conj(a), Ra)
    w = Ra / np.maximum(np.real(denom), 1e-30)[:, None]
    rows = np.einsum("fi,fit->ft", np.conj(w), X)
    if grid.ch1.bin_mask is not None:
        rows = np.where(grid.ch1.bin_mask[:, None], rows, 0.0)
    return MvdrResult(estimate=istft(_grid_like(grid.ch1, rows.T)), weights=w)


def _distance_correlation(a: np.ndarray, b: np.ndarray) -> float:
    def centered(v):
        D = np.abs(v[:, None] - v[None, :])
        return D - D.mean(axis=0) - D.mean(axis=1)[:, None] + D.mean()

    A = centered(a)
    B = centered(b)
    dcov2 = (A * B).mean()
    dvar_a = (A * A).mean()
    dvar_b = (B * B).mean()
    if dvar_a <= 0 or dvar_b <= 0:
        return 0.0
    return float(np.sqrt(max(dcov2, 0.0) / np.sqrt(dvar_a * dvar_b)))


def independence_check(a: SampleBuffer, b: SampleBuffer,
                       max_pairs: int = 1500) -> dict:
    """Crude statistical dependence report between two signals.

    Pearson correlation uses every sample; distance correlation (which
    also catches nonlinear dependence) runs on an evenly strided subset
    capped at max_pairs samples to keep the pairwise matrices small.
    """
    n = min(len(a), len(b))
    if n < 8:
        raise ValueError("signals too short to compare")
    x = a.samples[:n]
    y = b.samples[:n]
    sx = x.std()
    sy = y.std()
    pearson = float(np.corrcoef(x, y)[0, 1]) if sx > 0 and sy > 0 else 0.0
    stride = max(1, int(np.ceil(n / max_pairs)))
    dcor = _distance_correlation(x[::stride], y[::stride])
    return {
        "pearson_r": pearson,
        "distance_correlation": dcor,
        "n_samples": n,
        "n_subsampled": x[::stride].size,
    }
