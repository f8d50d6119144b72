"""Unknown fading-gain handling: per-hypothesis Kalman recursion and the
batch conjugate-Gaussian comparator.

The recursion is written in unit-noise units (the "+1" denominators);
callers working at noise variance sigma^2 rescale observations and
responses by 1/sigma before updating, which leaves the estimated gain
unchanged.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np


@dataclass
class FadingBelief:
    """Per-hypothesis Gaussian belief over the complex channel gain."""

    mu: np.ndarray      # complex, length M
    sigma: np.ndarray   # variances >= 0, length M

    @classmethod
    def from_prior(cls, M: int, mu_alpha: complex = 1.0 + 0.0j,
                   sigma_alpha: float = 0.0625) -> "FadingBelief":
        if sigma_alpha < 0:
            raise ValueError("prior variance must be nonnegative")
        return cls(mu=np.full(M, mu_alpha, dtype=complex),
                   sigma=np.full(M, float(sigma_alpha)))

    def copy(self) -> "FadingBelief":
        return FadingBelief(self.mu.copy(), self.sigma.copy())


def kalman_update(belief: FadingBelief, i: int, c: complex, y: complex):
    """One scalar Kalman step for hypothesis i; returns the new (mu_i, sigma_i)."""
    mu, sig = belief.mu[i], belief.sigma[i]
    denom = sig * abs(c) ** 2 + 1.0
    mu_new = mu + sig * np.conj(c) / denom * (y - mu * c)
    sig_new = sig / denom
    belief.mu[i] = mu_new
    belief.sigma[i] = sig_new
    return mu_new, sig_new


def kalman_update_all(belief: FadingBelief, c: np.ndarray, y: complex) -> None:
    """Kalman step for every hypothesis at once (same observation y)."""
    denom = belief.sigma * np.abs(c) ** 2 + 1.0
    belief.mu = belief.mu + belief.sigma * np.conj(c) / denom * (y - belief.mu * c)
    belief.sigma = belief.sigma / denom


def nu_unknown(belief: FadingBelief, i: int, c: complex, y: complex) -> float:
    """Probability factor exp(-|y - mu_i c|^2 / (sigma_i |c|^2 + 1))."""
    return float(np.exp(-abs(y - belief.mu[i] * c) ** 2
                        / (belief.sigma[i] * abs(c) ** 2 + 1.0)))


def nu_unknown_all(belief: FadingBelief, c: np.ndarray, y: complex) -> np.ndarray:
    return np.exp(-np.abs(y - belief.mu * c) ** 2 / (belief.sigma * np.abs(c) ** 2 + 1.0))


def batch_mmse(history, prior):
    """Closed-form Gaussian posterior over the gain given the whole history.

    history: iterable of (c_t, y_t); prior: (mu_alpha, sigma_alpha). Returns
    (mu, sigma). A zero prior variance pins the gain: the prior is returned
    unchanged.
    """
    mu_a, sig_a = prior
    if sig_a == 0:
        return mu_a, 0.0
    cs = np.array([c for c, _ in history], dtype=complex)
    ys = np.array([y for _, y in history], dtype=complex)
    precision = 1.0 / sig_a + np.sum(np.abs(cs) ** 2)
    sigma = 1.0 / precision
    mu = sigma * (mu_a / sig_a + np.sum(np.conj(cs) * ys))
    return complex(mu), float(sigma)


def batch_mmse_all(C: np.ndarray, ys: np.ndarray, prior) -> FadingBelief:
    """Vectorized batch posterior for all hypotheses; C is (T, M), ys is (T,)."""
    mu_a, sig_a = prior
    M = C.shape[1]
    if sig_a == 0:
        return FadingBelief.from_prior(M, mu_a, 0.0)
    precision = 1.0 / sig_a + np.sum(np.abs(C) ** 2, axis=0)
    sigma = 1.0 / precision
    mu = sigma * (mu_a / sig_a + np.conj(C).T @ ys)
    return FadingBelief(mu=mu, sigma=sigma)


def runtime_compare(trials: int, T: int, M: int = 128, seed: int = 0):
    """Wall-clock seconds per trial for the sequential Kalman recursion vs
    the batch estimator recomputed from scratch at every step."""
    if trials <= 0 or T <= 0:
        raise ValueError("trials and T must be positive")
    rng = np.random.default_rng(seed)
    C = (rng.standard_normal((trials, T, M)) + 1j * rng.standard_normal((trials, T, M))) / np.sqrt(2)
    ys = rng.standard_normal((trials, T)) + 1j * rng.standard_normal((trials, T))
    prior = (1.0 + 0.0j, 0.0625)

    t0 = time.perf_counter()
    for s in range(trials):
        belief = FadingBelief.from_prior(M, *prior)
        for t in range(T):
            kalman_update_all(belief, C[s, t], ys[s, t])
    kalman_seconds = (time.perf_counter() - t0) / trials

    t0 = time.perf_counter()
    for s in range(trials):
        for t in range(T):
            batch_mmse_all(C[s, : t + 1], ys[s, : t + 1], prior)
    batch_seconds = (time.perf_counter() - t0) / trials
    return kalman_seconds, batch_seconds
