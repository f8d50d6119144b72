"""Query -> beamformer mappings and the separation diagnostics.

Two mappings are provided: the linear weighted sum of in-region steering
vectors (unit weights) and a trained dense network. The gap diagnostics
quantify how far a beam is from an ideal region indicator, probed noise
free exactly as the reference figures do.
"""

from __future__ import annotations

import numpy as np

from .geometry import (
    AngleGrid,
    Query,
    bin_midpoints,
    midpoints,
    steering_matrix,
    steering_stack,
)

ZERO_NORM_TOL = 1e-12


class DegenerateBeamError(ValueError):
    """Raised when a mapping would have to normalize a (near-)zero vector."""


def _unit(v: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(v)
    if nrm < ZERO_NORM_TOL:
        raise DegenerateBeamError("beamformer sum cancelled to zero")
    return v / nrm


def power_at(w: np.ndarray, thetas, grid: AngleGrid) -> np.ndarray:
    """Noise-free receive power |w^H A(theta)|^2 at each probe angle."""
    resp = steering_matrix(thetas, grid) @ np.conj(w)
    return np.abs(resp) ** 2


def lws_map(query: Query, grid: AngleGrid) -> np.ndarray:
    """Normalized unit-weight sum of the query's secondary-midpoint steering vectors."""
    query.validate(grid)
    return _unit(steering_stack(query, grid).sum(axis=0))


def mlp_map(query: Query, grid: AngleGrid, model) -> np.ndarray:
    """Beamformer from a trained dense network (one model per query size)."""
    query.validate(grid)
    if model.trained_for_K != query.K:
        raise ValueError(
            f"model was trained for K={model.trained_for_K}, query has K={query.K}")
    from .mlp import stack_to_input
    return model.forward(stack_to_input(steering_stack(query, grid)))


def _region_split(query: Query, grid: AngleGrid):
    """(in-region, out-of-region) secondary-midpoint angle arrays."""
    member = set(query.bins)
    outside = Query([i for i in range(1, grid.M + 1) if i not in member]) \
        if len(member) < grid.M else None
    theta_in = midpoints(query, grid)
    theta_out = midpoints(outside, grid) if outside is not None else np.empty(0)
    return theta_in, theta_out


def threshold_select(query: Query, grid: AngleGrid, w: np.ndarray) -> float:
    """Power threshold: minimum noise-free in-region secondary-midpoint power."""
    return float(np.min(power_at(w, midpoints(query, grid), grid)))


def gap_from_powers(p_in: np.ndarray, p_out: np.ndarray) -> float:
    """Separation statistic max(out) - min(in); -inf against an empty out set."""
    p_in = np.asarray(p_in, dtype=float)
    if p_in.size == 0:
        raise ValueError("need at least one in-region probe")
    p_out = np.asarray(p_out, dtype=float)
    if p_out.size == 0:
        return float("-inf")
    return float(p_out.max() - p_in.min())


def gap_1bit(query: Query, grid: AngleGrid, w: np.ndarray) -> float:
    """Max out-of-region power minus min in-region power (negative = perfect).

    Probes are the secondary-sub-interval midpoints; -inf when the query
    covers every sub-interval (nothing to confuse with).
    """
    theta_in, theta_out = _region_split(query, grid)
    return gap_from_powers(power_at(w, theta_in, grid),
                           power_at(w, theta_out, grid))


def mean_power_margin(query: Query, grid: AngleGrid, w: np.ndarray) -> float:
    """Min in-region power minus the average out-of-region power."""
    theta_in, theta_out = _region_split(query, grid)
    if theta_out.size == 0:
        return float("inf")
    return float(power_at(w, theta_in, grid).min() - power_at(w, theta_out, grid).mean())


def nu_factor_matrix(query: Query, grid: AngleGrid, w: np.ndarray) -> np.ndarray:
    """Full-rule probability factors exp(-|w^H A(theta_j) - w^H A(theta_m)|^2).

    Row j runs over the query's sub-intervals treated as the noise-free
    signal direction, column m over all M hypothesis midpoints.
    """
    u = steering_matrix(bin_midpoints(grid), grid) @ np.conj(w)
    rows = np.array([q - 1 for q in query.bins])
    diff = u[rows][:, None] - u[None, :]
    return np.exp(-np.abs(diff) ** 2)


def gap_full(query: Query, grid: AngleGrid, w: np.ndarray) -> float:
    """Full-rule separation: max out-of-region factor minus min in-region factor.

    For every in-region midpoint taken as the true direction, each in-region
    hypothesis should outweigh each out-of-region hypothesis; a negative gap
    certifies that one update moves posterior mass into the region no matter
    which member sub-interval holds the target. -inf when the query spans all
    sub-intervals.
    """
    query.validate(grid)
    if query.K == grid.M:
        return float("-inf")
    nu = nu_factor_matrix(query, grid, w)
    member = np.array([q - 1 for q in query.bins])
    mask_in = np.zeros(grid.M, dtype=bool)
    mask_in[member] = True
    nu_min_q = nu[:, mask_in].min()
    nu_max_nonq = nu[:, ~mask_in].max()
    return float(nu_max_nonq - nu_min_q)


def export_power_spectrum(w: np.ndarray, grid: AngleGrid, path,
                          step_deg: float = 1.0) -> np.ndarray:
    """Write (angle, noise-free power) rows over a uniform angle grid to CSV."""
    thetas = np.arange(grid.theta_min, grid.theta_max + 0.5 * step_deg, step_deg)
    p = power_at(w, thetas, grid)
    with open(path, "w") as fh:
        fh.write("angle_deg,power\n")
        for t, v in zip(thetas, p):
            fh.write(f"{format(t, '.12g')},{format(v, '.12g')}\n")
    return p
