"""Angle grid, unit-interval coordinates and ULA steering vectors.

The search interval [theta_min, theta_max] is partitioned into M equal
sub-intervals, each refined into k secondary sub-intervals. Angles are
degrees at the API boundary and radians internally. Sub-interval indices
are 1-based throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AngleGrid:
    """Uniform linear array geometry plus the angular search partition."""

    theta_min: float = -60.0
    theta_max: float = 60.0
    M: int = 64          # number of sub-intervals (hypotheses)
    k: int = 10          # secondary sub-intervals per sub-interval
    N_R: int = 64        # receive antennas
    d_over_lambda: float = 0.5   # element spacing in wavelengths

    def __post_init__(self):
        if not (-180.0 <= self.theta_min < self.theta_max <= 180.0):
            raise ValueError(
                f"need -180 <= theta_min < theta_max <= 180, got "
                f"[{self.theta_min}, {self.theta_max}]"
            )
        if self.M < 1 or self.k < 1 or self.N_R < 1:
            raise ValueError("M, k and N_R must all be >= 1")
        if self.M > self.N_R:
            raise ValueError(f"resolution limit requires M <= N_R (M={self.M}, N_R={self.N_R})")

    @property
    def span(self) -> float:
        return self.theta_max - self.theta_min

    @property
    def bin_width(self) -> float:
        return self.span / self.M


@dataclass(frozen=True)
class Query:
    """A set of sub-interval indices asked about in one time step."""

    bins: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "bins", tuple(sorted(set(int(b) for b in self.bins))))
        if not self.bins:
            raise ValueError("query must contain at least one sub-interval")

    @property
    def K(self) -> int:
        return len(self.bins)

    def validate(self, grid: AngleGrid) -> None:
        if self.bins[0] < 1 or self.bins[-1] > grid.M:
            raise ValueError(f"query bins {self.bins} outside [1..{grid.M}]")

    def contains_angle(self, theta: float, grid: AngleGrid) -> bool:
        return quantize(to_unit(theta, grid), grid.M) in set(self.bins)


def steering_vector(theta: float, grid: AngleGrid) -> np.ndarray:
    """Unit-norm ULA response to a plane wave from azimuth ``theta`` (degrees)."""
    if not -180.0 <= theta <= 180.0:
        raise ValueError(f"theta={theta} outside [-180, 180]")
    m = np.arange(grid.N_R)
    phase = 2.0 * np.pi * grid.d_over_lambda * m * np.sin(np.deg2rad(theta))
    return np.exp(1j * phase) / np.sqrt(grid.N_R)


def steering_matrix(thetas, grid: AngleGrid) -> np.ndarray:
    """Stack steering vectors for many angles into shape (len(thetas), N_R)."""
    thetas = np.asarray(thetas, dtype=float)
    m = np.arange(grid.N_R)
    phase = 2.0 * np.pi * grid.d_over_lambda * np.outer(np.sin(np.deg2rad(thetas)), m)
    return np.exp(1j * phase) / np.sqrt(grid.N_R)


def to_unit(theta: float, grid: AngleGrid) -> float:
    """Map an angle in [theta_min, theta_max] onto [0, 1]."""
    if not grid.theta_min <= theta <= grid.theta_max:
        raise ValueError(f"theta={theta} outside [{grid.theta_min}, {grid.theta_max}]")
    return (theta - grid.theta_min) / grid.span


def from_unit(u: float, grid: AngleGrid) -> float:
    """Inverse of :func:`to_unit`."""
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"u={u} outside [0, 1]")
    return grid.theta_min + u * grid.span


def quantize(u: float, M: int) -> int:
    """Sub-interval index of unit coordinate ``u``: ceil(u*M), with u=0 -> 1."""
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"u={u} outside [0, 1]")
    return max(1, int(np.ceil(u * M)))


def bin_midpoint(i: int, grid: AngleGrid) -> float:
    """Center angle of the i-th sub-interval (1-based)."""
    if not 1 <= i <= grid.M:
        raise ValueError(f"bin index {i} outside [1..{grid.M}]")
    return from_unit((2 * i - 1) / (2 * grid.M), grid)


def bin_midpoints(grid: AngleGrid) -> np.ndarray:
    """All M sub-interval center angles, ascending."""
    return grid.theta_min + (2 * np.arange(1, grid.M + 1) - 1) * grid.span / (2 * grid.M)


def secondary_midpoints(i: int, grid: AngleGrid) -> np.ndarray:
    """Center angles of the k secondary sub-intervals inside sub-interval i."""
    if not 1 <= i <= grid.M:
        raise ValueError(f"bin index {i} outside [1..{grid.M}]")
    kp = np.arange(1, grid.k + 1)
    u = (i - 1) / grid.M + (2 * kp - 1) / (2 * grid.M * grid.k)
    return grid.theta_min + u * grid.span


def midpoints(query: Query, grid: AngleGrid) -> np.ndarray:
    """Secondary-sub-interval center angles of every query member.

    Ordered by (sub-interval ascending, secondary index ascending); this
    ordering is part of the MLP input contract. Length K*k.
    """
    query.validate(grid)
    return np.concatenate([secondary_midpoints(i, grid) for i in query.bins])


def steering_stack(query: Query, grid: AngleGrid) -> np.ndarray:
    """Steering vectors of the query's secondary midpoints, shape (K*k, N_R)."""
    return steering_matrix(midpoints(query, grid), grid)
