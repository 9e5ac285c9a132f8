"""Choosing the array orientation that best isolates one source's delay."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .aoa import circular_distance_deg
from .scene import normalize_angle

DEFAULT_MAX_ITD_S = 0.05 / 343.0


def axis_distance_deg(a_deg, b_deg):
    """Distance between undirected axes (angles mod 180), in [0, 90]."""
    d = np.abs(np.asarray(a_deg, dtype=float)
               - np.asarray(b_deg, dtype=float)) % 180.0
    return np.minimum(d, 180.0 - d)


def pair_axis(a_deg: float, b_deg: float) -> tuple:
    """Orientation axis that puts two directions at mirrored local angles.

    At this orientation both directions share one inter-channel delay.
    Returned as (axis_deg, degenerate); the flag marks diametrically
    opposite inputs, where the formula still yields the one axis placing
    both at zero delay but the halfway notion itself is ambiguous.
    """
    a = normalize_angle(a_deg)
    b = normalize_angle(b_deg)
    degenerate = abs(circular_distance_deg(a, b) - 180.0) < 1e-9
    return normalize_angle(0.5 * (a + b)), degenerate


@dataclass(frozen=True)
class AlignmentPlan:
    """Rotation target for separating one source from the rest."""

    target_index: int
    theta_align: float
    predicted_local_aoas: tuple
    min_itd_gap: float
    target_delay_s: float
    interferer_delays_s: tuple
    degenerate: bool = False
    rotation_deg: float | None = None
    aligned_pair: tuple | None = None

    def to_dict(self) -> dict:
        return {
            "target_index": self.target_index,
            "theta_align": self.theta_align,
            "predicted_local_aoas": list(self.predicted_local_aoas),
            "min_itd_gap": self.min_itd_gap,
            "target_delay_s": self.target_delay_s,
            "interferer_delays_s": list(self.interferer_delays_s),
            "degenerate": self.degenerate,
            "rotation_deg": self.rotation_deg,
            "aligned_pair": (None if self.aligned_pair is None
                             else list(self.aligned_pair)),
        }


def _warn_near_coincident(target_deg: float, interferer_degs) -> None:
    for other in interferer_degs:
        gap = circular_distance_deg(target_deg, other)
        if 1e-9 < gap < 2.0:
            warnings.warn(
                f"target at {target_deg:.2f} deg is only {gap:.2f} deg from "
                "an interferer; the plan will isolate it poorly",
                stacklevel=3,
            )


def _build_plan(target_index: int, thetas, orientation: float,
                max_itd_s: float, degenerate: bool, aligned_pair,
                current_orientation_deg) -> AlignmentPlan:
    thetas = np.asarray(thetas, dtype=float)
    locals_deg = tuple(normalize_angle(t - orientation) for t in thetas)
    delays = max_itd_s * np.cos(np.radians(locals_deg))
    target_delay = float(delays[target_index])
    interferer_delays = tuple(
        float(d) for i, d in enumerate(delays) if i != target_index
    )
    if interferer_delays:
        gap = float(min(abs(target_delay - d) for d in interferer_delays))
    else:
        gap = float("inf")
    rotation = None
    if current_orientation_deg is not None:
        rotation = normalize_angle(orientation - current_orientation_deg)
    return AlignmentPlan(
        target_index=target_index,
        theta_align=orientation,
        predicted_local_aoas=locals_deg,
        min_itd_gap=gap,
        target_delay_s=target_delay,
        interferer_delays_s=interferer_delays,
        degenerate=degenerate,
        rotation_deg=rotation,
        aligned_pair=aligned_pair,
    )


def _nearer_representation(axis_deg: float,
                           current_orientation_deg: float | None) -> float:
    """The alignment objective repeats every half turn; pick the physical
    orientation (axis or axis + 180) needing the smaller rotation."""
    if current_orientation_deg is None:
        return normalize_angle(axis_deg)
    options = (normalize_angle(axis_deg), normalize_angle(axis_deg + 180.0))
    dists = [circular_distance_deg(o, current_orientation_deg)
             for o in options]
    return options[int(np.argmin(dists))]


def bisector_angle(target_index: int, thetas_deg,
                   max_itd_s: float = DEFAULT_MAX_ITD_S,
                   current_orientation_deg: float | None = None
                   ) -> AlignmentPlan:
    """Three-source alignment: rotate to halfway between the interferers.

    At that orientation the two non-target sources sit at exactly
    mirrored local angles, so their delays coincide and the mixture
    behaves as two effective sources. Diametrically opposite interferers
    are flagged degenerate (they align only at zero delay).
    """
    thetas = [normalize_angle(t) for t in thetas_deg]
    if len(thetas) != 3:
        raise ValueError("bisector planning needs exactly 3 directions")
    if not 0 <= target_index < 3:
        raise ValueError("target_index out of range")
    others = [t for i, t in enumerate(thetas) if i != target_index]
    _warn_near_coincident(thetas[target_index], others)
    axis, degenerate = pair_axis(others[0], others[1])
    orientation = _nearer_representation(axis, current_orientation_deg)
    pair = tuple(i for i in range(3) if i != target_index)
    return _build_plan(target_index, thetas, orientation, max_itd_s,
                       degenerate, pair, current_orientation_deg)


def _interferer_groups(grid_deg: np.ndarray, pair_axes: np.ndarray,
                       pairs: list, n_interferers: int,
                       tol_deg: float) -> np.ndarray:
    """Distinct interferer delay groups at each candidate orientation.

    A pair counts as merged when the orientation lies within tol_deg of
    the pair's alignment axis; the group count is the number of connected
    components that the merged pairs leave.
    """
    counts = np.full(grid_deg.size, n_interferers, dtype=int)
    if not pairs:
        return counts
    near = axis_distance_deg(grid_deg[:, None], pair_axes[None, :]) <= tol_deg
    for g in np.flatnonzero(near.any(axis=1)):
        parent = list(range(n_interferers))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for p_idx in np.flatnonzero(near[g]):
            i, j = pairs[p_idx]
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[ri] = rj
        counts[g] = len({find(i) for i in range(n_interferers)})
    return counts


def general_alignment(target_index: int, thetas_deg,
                      grid_step: float = 0.25,
                      max_itd_s: float = DEFAULT_MAX_ITD_S,
                      current_orientation_deg: float | None = None
                      ) -> AlignmentPlan:
    """Grid search for the orientation isolating the target's delay.

    Evaluates every orientation on a grid over (-180, 180] and picks, de
    facto lexicographically: first the smallest number of distinct
    interferer delay groups (rotating onto a pair's alignment axis merges
    that pair, which is what keeps the effective source count down), then
    the largest gap between the target's delay and the nearest interferer
    delay. For 3 sources this lands on the interferer bisector axis
    within the grid resolution.
    """
    thetas = [normalize_angle(t) for t in thetas_deg]
    k = len(thetas)
    if k < 3:
        raise ValueError("grid alignment needs at least 3 directions")
    if not 0 <= target_index < k:
        raise ValueError("target_index out of range")
    if not 0 < grid_step <= 1.0:
        raise ValueError("grid_step must be in (0, 1] degrees")
    target = thetas[target_index]
    interferers = [t for i, t in enumerate(thetas) if i != target_index]
    for other in interferers:
        if circular_distance_deg(target, other) < 1e-9:
            raise ValueError("target not separable: an interferer shares "
                             "its direction")
    _warn_near_coincident(target, interferers)

    n_grid = int(round(360.0 / grid_step))
    grid = -180.0 + grid_step * np.arange(1, n_grid + 1)
    delays = max_itd_s * np.cos(
        np.radians(np.asarray(interferers)[None, :] - grid[:, None])
    )
    t_delay = max_itd_s * np.cos(np.radians(target - grid))
    gap = np.min(np.abs(t_delay[:, None] - delays), axis=1)

    n_int = len(interferers)
    pairs = [(i, j) for i in range(n_int) for j in range(i + 1, n_int)]
    pair_axes = np.array([pair_axis(interferers[i], interferers[j])[0]
                          for i, j in pairs])
    counts = _interferer_groups(grid, pair_axes, pairs, n_int,
                                tol_deg=0.75 * grid_step)
    stratum = counts == counts.min()
    best = int(np.argmax(np.where(stratum, gap, -np.inf)))

    aligned_pair = None
    pair_mean = None
    if pairs:
        dists = axis_distance_deg(grid[best], pair_axes)
        p_idx = int(np.argmin(dists))
        if dists[p_idx] <= 0.75 * grid_step:
            i, j = pairs[p_idx]
            full = [i for i in range(k) if i != target_index]
            aligned_pair = (full[i], full[j])
            pair_mean = 0.5 * (interferers[i] + interferers[j])
    if current_orientation_deg is not None:
        orientation = _nearer_representation(grid[best],
                                             current_orientation_deg)
    elif pair_mean is not None:
        # Flipping by a half turn negates every delay but keeps all the
        # gaps, so pick the representation nearer the plain average of
        # the aligned pair (the form the three-source rule reports).
        orientation = _nearer_representation(grid[best], pair_mean)
    else:
        orientation = normalize_angle(grid[best])
    plan = _build_plan(target_index, thetas, orientation, max_itd_s,
                       False, aligned_pair, current_orientation_deg)
    if plan.min_itd_gap < 1e-12:
        raise ValueError("target not separable: delay gap vanishes at the "
                         "best orientation")
    return plan


def candidate_alignments(target_index: int, thetas_deg,
                         max_itd_s: float = DEFAULT_MAX_ITD_S,
                         current_orientation_deg: float | None = None
                         ) -> list:
    """One plan per interferer pair, for trial-and-error separation.

    Each plan rotates onto a distinct pair alignment axis; duplicate axes
    collapse. With a single interferer the mixture is already determined,
    so the lone plan keeps the current orientation (or the delay-gap
    maximizer when none is given).
    """
    thetas = [normalize_angle(t) for t in thetas_deg]
    k = len(thetas)
    if not 0 <= target_index < k:
        raise ValueError("target_index out of range")
    interferers = [(i, t) for i, t in enumerate(thetas) if i != target_index]
    if not interferers:
        raise ValueError("nothing to separate from")
    if len(interferers) == 1:
        if current_orientation_deg is not None:
            orientation = current_orientation_deg
        else:
            axis, _ = pair_axis(thetas[target_index], interferers[0][1])
            orientation = normalize_angle(axis + 90.0)
        return [_build_plan(target_index, thetas, orientation, max_itd_s,
                            False, None, current_orientation_deg)]
    plans = []
    seen = []
    for a in range(len(interferers)):
        for b in range(a + 1, len(interferers)):
            axis, degenerate = pair_axis(interferers[a][1],
                                         interferers[b][1])
            key = round(axis % 180.0, 6)
            if any(abs(key - s) < 1e-6 for s in seen):
                continue
            seen.append(key)
            orientation = _nearer_representation(axis,
                                                 current_orientation_deg)
            plans.append(_build_plan(
                target_index, thetas, orientation, max_itd_s, degenerate,
                (interferers[a][0], interferers[b][0]),
                current_orientation_deg,
            ))
    return plans


def order_candidates(plans, phi_current_deg: float) -> list:
    """Sort plans by how far the array must rotate, nearest first.

    Ties keep the input order, so repeated calls are stable.
    """
    if not plans:
        raise ValueError("no plans to order")
    return sorted(
        plans,
        key=lambda p: circular_distance_deg(p.theta_align, phi_current_deg),
    )


def alignment_gap(orientation_deg: float, target_deg: float,
                  interferer_degs, max_itd_s: float) -> float:
    """Distance from the target delay to the nearest interferer delay."""
    interferers = np.asarray(interferer_degs, dtype=float)
    if interferers.size == 0:
        return float("inf")
    t = max_itd_s * np.cos(np.radians(target_deg - orientation_deg))
    others = max_itd_s * np.cos(np.radians(interferers - orientation_deg))
    return float(np.min(np.abs(t - others)))
