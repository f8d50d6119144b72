"""The adaptive alignment loop: sortPM query selection, likelihood
evaluation, posterior update, stopping and decoding.

One trial is a sequence of (query -> beamformer -> pilot -> measurement ->
posterior update) steps that stops once one sub-interval holds posterior
mass above 1 - epsilon or the pilot budget runs out; the estimate is the
center of the argmax sub-interval.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import fading as fad
from .beammaps import threshold_select
from .channel import (
    ChannelParams,
    QueryDependentChannel,
    affine_beta,
    measure_1bit,
    qd_channel_sample,
    receive,
)
from .geometry import (
    AngleGrid,
    Query,
    bin_midpoint,
    bin_midpoints,
    quantize,
    steering_matrix,
    steering_vector,
    to_unit,
)

HALF_MASS = 0.5


class DegenerateUpdateError(ArithmeticError):
    """Posterior update lost all probability mass (should be unreachable)."""


def uniform_posterior(M: int) -> np.ndarray:
    return np.full(M, 1.0 / M)


def sortpm_select(rho: np.ndarray) -> Query:
    """sortPM median split on the descending-sorted posterior.

    Returns the prefix whose cumulative mass is closest to 1/2; equally
    distant prefixes resolve toward the one holding at least half the mass.
    Sorting ties break toward the lower sub-interval index. Taking the
    closest split (rather than the first crossing) is what keeps exactly
    tied sub-intervals separable, so noise-free runs always converge.
    """
    rho = np.asarray(rho, dtype=float)
    order = np.argsort(-rho, kind="stable")
    csum = np.cumsum(rho[order])
    dist = np.abs(csum - HALF_MASS)
    cut = int(dist.argmin())
    if csum[cut] < HALF_MASS and cut + 1 < len(csum) and dist[cut + 1] <= dist[cut] + 1e-12:
        cut += 1
    return Query(order[: cut + 1] + 1)


def quadratic_loss(theta_hat: float, theta_true: float) -> float:
    return (theta_hat - theta_true) ** 2


def update_posterior(rho: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Bayes step rho'_i = rho_i * delta_i / sum(rho * delta).

    Likelihoods are clamped at 1e-300 so floating-point underflow cannot
    zero out the whole update.
    """
    deltas = np.asarray(deltas, dtype=float)
    if np.any(deltas < 0):
        raise ValueError("likelihoods must be nonnegative")
    deltas = np.maximum(deltas, 1e-300)
    weighted = rho * deltas
    mass = weighted.sum()
    if mass <= 0.0 or not np.isfinite(mass):
        raise DegenerateUpdateError("posterior update mass vanished")
    return weighted / mass


def stop_or_continue(rho: np.ndarray, epsilon: float, t: int, n: int) -> Optional[int]:
    """Argmax sub-interval (1-based) if the trial should stop now, else None."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if t > n:
        raise ValueError("time index exceeded the pilot budget")
    if rho.max() > 1.0 - epsilon or t == n:
        return int(rho.argmax()) + 1
    return None


def decode(i_hat: int, grid: AngleGrid) -> float:
    """AoA estimate: center angle of the decoded sub-interval."""
    return bin_midpoint(i_hat, grid)


def likelihood_delta(measurement, theta_i: float, w, rule: str, query: Query,
                     grid: AngleGrid, params: ChannelParams, p: float = 0.1,
                     fading=None) -> float:
    """Per-hypothesis likelihood factor of one measurement.

    rule="1bit": Bern(z XOR membership; p) with flip probability p.
    rule="full", fading None: exp(-|y - alpha sqrt(P) w^H A(theta_i)|^2 / sigma^2).
    rule="full", fading=(mu_i, sigma_i): the replaced factor with the
    per-hypothesis gain belief; noise variance folded in by 1/sigma scaling.
    """
    if rule == "1bit":
        if not 0.0 < p < 0.5:
            raise ValueError(f"flip probability p={p} outside (0, 0.5)")
        member = quantize(to_unit(theta_i, grid), grid.M) in set(query.bins)
        return 1.0 - p if bool(measurement) == member else p
    if rule != "full":
        raise ValueError(f"unknown measurement rule {rule!r}")
    if params.sigma2 <= 0:
        raise ValueError("full-rule likelihood needs a positive noise variance")
    c = np.vdot(w, steering_vector(theta_i, grid))
    if fading is None:
        mean = params.alpha * np.sqrt(params.power) * c
        return float(np.exp(-abs(measurement - mean) ** 2 / params.sigma2))
    mu_i, sig_i = fading
    s = np.sqrt(params.sigma2)
    ct = np.sqrt(params.power) * c / s
    return float(np.exp(-abs(measurement / s - mu_i * ct) ** 2
                        / (sig_i * abs(ct) ** 2 + 1.0)))


@dataclass
class StepRecord:
    t: int
    K: int
    measurement: object      # bit (1-bit rule) or complex sample (full rule)
    max_rho: float
    desired: int             # ideal indicator response for this query
    correct: bool


@dataclass
class TrialResult:
    theta_hat: float
    theta_true: float
    tau: int
    i_hat: int
    quadratic_loss: float
    trace: list[StepRecord] = field(default_factory=list)

    def steps_correct(self) -> float:
        if not self.trace:
            return float("nan")
        return float(np.mean([r.correct for r in self.trace]))


def trace_jsonl(result: TrialResult) -> str:
    """Per-step trace as JSON lines (complex measurements become [re, im])."""
    lines = []
    for r in result.trace:
        m = r.measurement
        if isinstance(m, complex):
            m = [m.real, m.imag]
        lines.append(json.dumps({"t": r.t, "K": r.K, "measurement": m,
                                 "max_rho": r.max_rho, "desired": r.desired,
                                 "correct": r.correct}))
    return "\n".join(lines)


@dataclass
class AlignmentConfig:
    """Everything one adaptive trial needs except the sampled true angle."""

    grid: AngleGrid
    mapper: Callable[[Query, AngleGrid], np.ndarray]
    params: ChannelParams
    rule: str = "1bit"
    epsilon: float = 0.05
    n: int = 10
    p: float = 0.1
    p_by_k: Optional[dict] = None      # optional per-K calibrated flip probs
    fading: str = "known"              # known | kalman | mmse
    fading_prior: tuple = (1.0 + 0.0j, 0.0625)
    channel: str = "physical"          # physical | ideal (abstract BSC oracle)
    beta: Optional[Callable[[float], float]] = None
    select: Callable[[np.ndarray], Query] = sortpm_select

    def __post_init__(self):
        if self.rule not in ("1bit", "full"):
            raise ValueError(f"unknown rule {self.rule!r}")
        if self.fading not in ("known", "kalman", "mmse"):
            raise ValueError(f"unknown fading mode {self.fading!r}")
        if self.channel not in ("physical", "ideal"):
            raise ValueError(f"unknown channel mode {self.channel!r}")
        if self.fading != "known" and self.rule != "full":
            raise ValueError("gain estimation applies to the full rule only")
        if self.channel == "ideal" and self.rule != "1bit":
            raise ValueError("the abstract oracle channel responds with bits")
        if self.rule == "1bit" and not 0.0 < self.p < 0.5:
            raise ValueError(f"flip probability p={self.p} outside (0, 0.5)")
        if self.rule == "full" and self.params.sigma2 <= 0:
            raise ValueError("full rule needs a positive noise variance")


def run_alignment(theta_true: float, cfg: AlignmentConfig,
                  rng: np.random.Generator) -> TrialResult:
    """One adaptive beam-alignment trial; deterministic given (cfg, rng state)."""
    grid = cfg.grid
    params = cfg.params
    rho = uniform_posterior(grid.M)
    true_bin = quantize(to_unit(theta_true, grid), grid.M)
    mids = bin_midpoints(grid)
    A_bins = steering_matrix(mids, grid)
    belief = None
    history_c, history_y = [], []
    if cfg.fading != "known":
        belief = fad.FadingBelief.from_prior(grid.M, *cfg.fading_prior)
    ideal_ch = QueryDependentChannel("bsc", cfg.beta or affine_beta()) \
        if cfg.channel == "ideal" else None

    trace: list[StepRecord] = []
    tau = cfg.n
    for t in range(1, cfg.n + 1):
        query = cfg.select(rho)
        member = np.zeros(grid.M, dtype=bool)
        member[np.array(query.bins) - 1] = True
        desired = int(true_bin in set(query.bins))
        p_eff = cfg.p_by_k.get(query.K, cfg.p) if cfg.p_by_k else cfg.p

        if cfg.channel == "ideal":
            z = qd_channel_sample(ideal_ch, desired, query.K / grid.M, rng)
            deltas = np.where(member == bool(z), 1.0 - p_eff, p_eff)
            observed: object = z
            correct = z == desired
        else:
            w = cfg.mapper(query, grid)
            y = receive(w, theta_true, grid, params, rng)
            c = A_bins @ np.conj(w)          # c_i = w^H A(theta_i)
            if cfg.rule == "1bit":
                iota = abs(params.alpha) ** 2 * params.power * threshold_select(query, grid, w)
                z = measure_1bit(y, iota)
                deltas = np.where(member == bool(z), 1.0 - p_eff, p_eff)
                observed = z
                correct = z == desired
            else:
                if cfg.fading == "known":
                    mean = params.alpha * np.sqrt(params.power) * c
                    deltas = np.exp(-np.abs(y - mean) ** 2 / params.sigma2)
                else:
                    s = np.sqrt(params.sigma2)
                    ct = np.sqrt(params.power) * c / s
                    yt = y / s
                    deltas = fad.nu_unknown_all(belief, ct, yt)
                    if cfg.fading == "kalman":
                        fad.kalman_update_all(belief, ct, yt)
                    else:
                        history_c.append(ct)
                        history_y.append(yt)
                        belief = fad.batch_mmse_all(
                            np.array(history_c), np.array(history_y), cfg.fading_prior)
                observed = complex(y)
                out = deltas[~member]
                correct = (not desired) or (out.size == 0) \
                    or (deltas[true_bin - 1] > out.max())

        rho = update_posterior(rho, deltas)
        trace.append(StepRecord(t, query.K, observed, float(rho.max()),
                                desired, bool(correct)))
        decided = stop_or_continue(rho, cfg.epsilon, t, cfg.n)
        if decided is not None:
            tau = t
            i_hat = decided
            break

    theta_hat = decode(i_hat, grid)
    return TrialResult(theta_hat=theta_hat, theta_true=theta_true, tau=tau,
                       i_hat=i_hat, quadratic_loss=quadratic_loss(theta_hat, theta_true),
                       trace=trace)


def accuracy(mapper, rule: str, grid: AngleGrid, snr_db: float, trials: int,
             rng: np.random.Generator, n: int = 10, epsilon: float = 0.05,
             p: float = 0.1) -> float:
    """Fraction of steps whose actual response matches the desired response,
    averaged over full adaptive trials with uniformly drawn true angles."""
    if trials <= 0:
        raise ValueError("need at least one trial")
    cfg = AlignmentConfig(grid=grid, mapper=mapper,
                          params=ChannelParams.from_snr_db(snr_db),
                          rule=rule, epsilon=epsilon, n=n, p=p)
    flags = []
    for _ in range(trials):
        theta = rng.uniform(grid.theta_min, grid.theta_max)
        res = run_alignment(theta, cfg, rng)
        flags.extend(r.correct for r in res.trace)
    return float(np.mean(flags))
