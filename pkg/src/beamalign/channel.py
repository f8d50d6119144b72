"""Received-signal model, measurement rules and query-dependent channels.

Two distinct code paths coexist: the physical simulator (complex fading,
array noise, power threshold) and abstract query-dependent BSC/AWGN
channels used as oracles in tests and for the channel-model validation
harness.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import AngleGrid, Query, steering_vector, to_unit, quantize

UNIT_NORM_TOL = 1e-6


@dataclass(frozen=True)
class ChannelParams:
    """Fading coefficient, transmit power and per-antenna noise variance."""

    alpha: complex = 1.0 + 0.0j
    power: float = 1.0
    sigma2: float = 1.0

    def __post_init__(self):
        if self.power <= 0:
            raise ValueError("transmit power must be positive")
        if self.sigma2 < 0:
            raise ValueError("noise variance must be nonnegative")

    @property
    def snr_db(self) -> float:
        if self.sigma2 == 0:
            return float("inf")
        return 10.0 * np.log10(self.power / self.sigma2)

    @classmethod
    def from_snr_db(cls, snr_db: float, alpha: complex = 1.0 + 0.0j) -> "ChannelParams":
        """Unit transmit power; SNR swept through the noise variance."""
        return cls(alpha=alpha, power=1.0, sigma2=10.0 ** (-snr_db / 10.0))


def receive(w: np.ndarray, theta_true: float, grid: AngleGrid,
            params: ChannelParams, rng: np.random.Generator) -> complex:
    """One pilot observation y = alpha*sqrt(P)*w^H A(theta) + w^H n.

    The noise vector is CN(0, sigma2*I), so the combined scalar noise has
    variance sigma2 for unit-norm w.
    """
    nrm = np.linalg.norm(w)
    if abs(nrm - 1.0) > UNIT_NORM_TOL:
        raise ValueError(f"beamformer must be unit norm, got ||w||={nrm!r}")
    a = steering_vector(theta_true, grid)
    y = params.alpha * np.sqrt(params.power) * np.vdot(w, a)
    if params.sigma2 > 0:
        n = rng.normal(scale=np.sqrt(params.sigma2 / 2.0), size=(grid.N_R, 2))
        y = y + np.vdot(w, n[:, 0] + 1j * n[:, 1])
    return complex(y)


def measure_full(y: complex) -> complex:
    """Full measurement rule: the received sample is used as-is."""
    return y


def measure_1bit(y: complex, iota: float) -> int:
    """1-bit measurement rule: 1 iff received power strictly exceeds iota."""
    if iota < 0:
        raise ValueError("power threshold must be nonnegative")
    return int(abs(y) ** 2 > iota)


def affine_beta(beta0: float = 0.05, beta1: float = 0.2,
                clip: float = 0.45) -> Callable[[float], float]:
    """Default query-size noise profile beta(s) = clip(beta0 + beta1*s).

    The affine shape is a stand-in: the model only requires beta to be
    bounded and Lipschitz on [0, 1]. Outputs that echo configuration label
    it as such.
    """
    def beta(s: float) -> float:
        return float(np.clip(beta0 + beta1 * s, 0.0, clip))
    return beta


@dataclass(frozen=True)
class QueryDependentChannel:
    """Abstract channel whose noise severity depends on the query size.

    kind="bsc": crossover probability beta(s), requires beta(s) in [0, 0.5).
    kind="awgn": additive noise with standard deviation beta(s)*sigma.
    """

    kind: str
    beta: Callable[[float], float]
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("bsc", "awgn"):
            raise ValueError(f"unknown channel kind {self.kind!r}")


def qd_channel_sample(ch: QueryDependentChannel, x, query_size: float,
                      rng: np.random.Generator):
    """Pass one symbol through the query-dependent channel.

    query_size is the query's measure |A| in [0, 1] (K/M for bin queries).
    """
    if not 0.0 <= query_size <= 1.0:
        raise ValueError(f"query size {query_size} outside [0, 1]")
    b = ch.beta(query_size)
    if ch.kind == "bsc":
        if x not in (0, 1):
            raise ValueError("BSC input must be a bit")
        if not 0.0 <= b < 0.5:
            raise ValueError(f"BSC crossover beta={b} outside [0, 0.5)")
        return int(x) ^ int(rng.random() < b)
    return float(x) + rng.normal(scale=b * ch.sigma) if b > 0 else float(x)


def estimate_effective_flip_prob(mapper, grid: AngleGrid, K: int, snr_db: float,
                                 trials: int, rng: np.random.Generator) -> float:
    """Empirical crossover probability of the physical 1-bit pipeline.

    Draws random size-K queries; the true angle is placed uniformly inside
    the query region with probability 1/2 and uniformly outside otherwise,
    so that an uninformative measurement yields exactly 1/2. The returned
    rate is the empirical beta(K/M) induced by the imperfect questioner
    plus channel noise.
    """
    from .beammaps import threshold_select   # local import avoids a cycle

    if trials <= 0:
        raise ValueError("need at least one trial")
    if not 1 <= K <= grid.M:
        raise ValueError(f"K={K} outside [1..{grid.M}]")
    params = ChannelParams.from_snr_db(snr_db)
    disagree = 0
    for _ in range(trials):
        bins = rng.choice(grid.M, size=K, replace=False) + 1
        query = Query(bins)
        w = mapper(query, grid)
        iota = abs(params.alpha) ** 2 * params.power * threshold_select(query, grid, w)
        inside = True if K == grid.M else bool(rng.random() < 0.5)
        pool = query.bins if inside else tuple(
            i for i in range(1, grid.M + 1) if i not in set(query.bins))
        i = pool[rng.integers(len(pool))]
        theta = grid.theta_min + (i - 1 + rng.random()) * grid.bin_width
        z = measure_1bit(receive(w, theta, grid, params, rng), iota)
        disagree += int(z != int(inside))
    return disagree / trials


def calibrate_flip_probs(mapper, grid: AngleGrid, snr_db: float, trials: int,
                         rng: np.random.Generator, k_max: int | None = None,
                         p_floor: float = 1e-3, p_ceil: float = 0.4999) -> dict[int, float]:
    """Per-K flip probabilities for the 1-bit posterior update, estimated
    empirically and clipped into the open interval the update requires."""
    k_max = k_max or grid.M
    return {K: float(np.clip(estimate_effective_flip_prob(mapper, grid, K, snr_db,
                                                          trials, rng),
                             p_floor, p_ceil))
            for K in range(1, k_max + 1)}
