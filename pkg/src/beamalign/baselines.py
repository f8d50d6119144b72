"""Benchmark alignment algorithms: naive sweep, two-stage hierarchical
sweep, and the regularized ideal-beam posterior-matching strategy."""

from __future__ import annotations

import csv

import numpy as np

from .beammaps import _unit
from .channel import ChannelParams, receive
from .geometry import AngleGrid, Query, bin_midpoints, secondary_midpoints, steering_matrix, steering_vector
from .questioner import AlignmentConfig, TrialResult, quadratic_loss, run_alignment


def naive_sweep(theta_true: float, n: int, grid: AngleGrid,
                params: ChannelParams, rng: np.random.Generator) -> TrialResult:
    """Probe the midpoints of an n-way partition with matched beams and pick
    the strongest; the estimate is that midpoint."""
    sweep_grid = AngleGrid(grid.theta_min, grid.theta_max, M=n, k=1,
                           N_R=grid.N_R, d_over_lambda=grid.d_over_lambda)
    mids = bin_midpoints(sweep_grid)
    powers = np.empty(n)
    for j, theta in enumerate(mids):
        w = steering_vector(theta, sweep_grid)
        powers[j] = abs(receive(w, theta_true, sweep_grid, params, rng)) ** 2
    i_hat = int(powers.argmax()) + 1
    theta_hat = float(mids[i_hat - 1])
    return TrialResult(theta_hat=theta_hat, theta_true=theta_true, tau=n,
                       i_hat=i_hat,
                       quadratic_loss=quadratic_loss(theta_hat, theta_true))


def hierarchical_split(n: int) -> tuple[int, int]:
    """Stage sizes (n1, n2): n1 = floor(sqrt(n)), remainder pilots to stage 2."""
    if n < 2:
        raise ValueError("two-stage search needs at least 2 pilots")
    n1 = int(np.sqrt(n))
    return n1, n - n1


def hierarchical_sweep(theta_true: float, n: int, grid: AngleGrid,
                       params: ChannelParams, rng: np.random.Generator,
                       n1: int | None = None) -> TrialResult:
    """Two-stage exhaustive search: n1 wide beams over equal slices, then n2
    matched narrow beams inside the winning slice. All n pilots count."""
    if n1 is None:
        n1, n2 = hierarchical_split(n)
    else:
        n2 = n - n1
        if n1 < 1 or n2 < 1:
            raise ValueError(f"invalid split n1={n1} of n={n}")
    stage_grid = AngleGrid(grid.theta_min, grid.theta_max, M=n1, k=n2,
                           N_R=grid.N_R, d_over_lambda=grid.d_over_lambda)
    from .beammaps import lws_map
    wide_powers = np.empty(n1)
    for j in range(1, n1 + 1):
        w = lws_map(Query([j]), stage_grid)
        wide_powers[j - 1] = abs(receive(w, theta_true, stage_grid, params, rng)) ** 2
    slice_hat = int(wide_powers.argmax()) + 1

    narrow_mids = secondary_midpoints(slice_hat, stage_grid)
    narrow_powers = np.empty(n2)
    for j, theta in enumerate(narrow_mids):
        w = steering_vector(theta, stage_grid)
        narrow_powers[j] = abs(receive(w, theta_true, stage_grid, params, rng)) ** 2
    j_hat = int(narrow_powers.argmax())
    theta_hat = float(narrow_mids[j_hat])
    i_hat = (slice_hat - 1) * n2 + j_hat + 1    # cell index in the n1*n2 partition
    return TrialResult(theta_hat=theta_hat, theta_true=theta_true, tau=n1 + n2,
                       i_hat=i_hat,
                       quadratic_loss=quadratic_loss(theta_hat, theta_true))


def default_loading(grid: AngleGrid) -> float:
    """0.1 of the mean eigenvalue of A_BS A_BS^H (columns are unit norm)."""
    return 0.1 * grid.M / grid.N_R


def hiepm_ideal_beam(query: Query, grid: AngleGrid,
                     sigma0_sq: float | None = None) -> np.ndarray:
    """Diagonally loaded least-squares approximation of the region indicator:
    w ~ (A_BS A_BS^H + sigma0^2 I)^(-1) A_BS G, normalized."""
    if sigma0_sq is None:
        sigma0_sq = default_loading(grid)
    if sigma0_sq <= 0:
        raise ValueError("diagonal loading must be positive")
    query.validate(grid)
    A_bs = steering_matrix(bin_midpoints(grid), grid).T          # (N_R, M)
    G = np.zeros(grid.M)
    G[np.array(query.bins) - 1] = 1.0
    lhs = A_bs @ A_bs.conj().T + sigma0_sq * np.eye(grid.N_R)
    return _unit(np.linalg.solve(lhs, A_bs @ G))


def hiepm_strategy_trial(theta_true: float, cfg: AlignmentConfig,
                         rng: np.random.Generator,
                         sigma0_sq: float | None = None) -> TrialResult:
    """The shared adaptive loop with the ideal-beam mapper under the 1-bit rule."""
    import dataclasses
    mapper = lambda q, g: hiepm_ideal_beam(q, g, sigma0_sq)
    return run_alignment(theta_true, dataclasses.replace(cfg, mapper=mapper), rng)


def load_reference_curve(path) -> list[tuple[float, float]]:
    """External benchmark series: CSV rows of (snr_db, mean_quadratic_loss)."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].lstrip().startswith("#"):
                continue
            try:
                rows.append((float(rec[0]), float(rec[1])))
            except ValueError:
                continue    # header line
    if not rows:
        raise ValueError(f"{path}: no (snr_db, loss) rows found")
    return rows
