"""Closed forms for consecutive sojourns of a stationary M/M/1 queue and the (2,1) repetition code."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from eqc import _rng
from eqc._rng import Estimate
from eqc.queue import check_stable


@dataclass(frozen=True)
class RepetitionParams:
    kappa: float
    lam: float
    mu: float

    def __post_init__(self):
        check_stable(self.lam, self.mu)
        if not self.kappa >= 0:
            raise ValueError("kappa must be non-negative")


def conditional_sojourn_density(w_prev, w_next, lam: float, mu: float):
    """Density of ``W_{i+1}`` at ``w_next`` given ``W_i = w_prev``, stationary M/M/1.

    The first term is the renewal branch (the next bit finds the queue empty);
    the second is the Lindley branch ``w_prev - A + S`` with ``A`` and ``S``
    exponential.
    """
    check_stable(lam, mu)
    w, v = np.asarray(w_prev, dtype=float), np.asarray(w_next, dtype=float)
    if np.any(w < 0) or np.any(v < 0):
        raise ValueError("sojourn times must be non-negative")
    d = v - w
    g = np.where(d >= 0, np.exp(-mu * np.maximum(d, 0)), np.exp(lam * np.minimum(d, 0)))
    out = mu / (lam + mu) * (mu * np.exp(-lam * w - mu * v) + lam * g)
    return out if out.ndim else float(out)


def next_erasure_given(w_prev: float, p: RepetitionParams) -> float:
    """``P(E_{i+1} | W_i = w_prev)`` in closed form (quadrature fallback when ``kappa == lam``)."""
    k, lam, mu = p.kappa, p.lam, p.mu
    if k == 0:
        return 0.0
    if abs(k - lam) < 1e-9 * max(k, lam):
        return next_erasure_given_quad(w_prev, p)
    return 1.0 - (mu * k * np.exp(-lam * w_prev) - lam * mu * np.exp(-k * w_prev)) / ((k + mu) * (k - lam))


def next_erasure_given_quad(w_prev: float, p: RepetitionParams) -> float:
    """Same quantity as :func:`next_erasure_given`, by integrating the conditional density."""
    f = lambda v: conditional_sojourn_density(w_prev, v, p.lam, p.mu) * -np.expm1(-p.kappa * v)
    lo, _ = integrate.quad(f, 0.0, w_prev, epsabs=1e-13, epsrel=1e-12) if w_prev > 0 else (0.0, 0.0)
    hi, _ = integrate.quad(f, w_prev, np.inf, epsabs=1e-13, epsrel=1e-12)
    return lo + hi


def repetition_error_integral(p: RepetitionParams, closed_inner: bool = True) -> float:
    """Both-erased probability as a single integral over the stationary sojourn of the first bit.

    Kept for cross-checking :func:`repetition_error_prob`; ``closed_inner=False``
    also integrates the inner conditional expectation numerically.
    """
    r = p.mu - p.lam
    inner = next_erasure_given if closed_inner else next_erasure_given_quad
    f = lambda w: r * np.exp(-r * w) * -np.expm1(-p.kappa * w) * inner(w, p)
    val, _ = integrate.quad(f, 0.0, np.inf, epsabs=1e-13, epsrel=1e-11, limit=200)
    return val


def repetition_error_prob(p: RepetitionParams) -> float:
    """Decoding error probability of the (2,1) repetition code: both copies erased."""
    k, lam, mu = p.kappa, p.lam, p.mu
    if np.isinf(k):
        return 1.0
    num = k * k * (2 * k * k - lam * lam + 2 * lam * mu + mu * mu + k * (lam + 3 * mu))
    den = (2 * k + mu - lam) * (k + mu - lam) * (k + mu) ** 2
    return float(num / den)


def repetition_error_mc(p: RepetitionParams, trials: int, seed: int) -> Estimate:
    """Monte Carlo both-erased rate over independent stationary consecutive pairs.

    Each trial is one disjoint pair: ``W_i ~ Exp(mu - lam)``, one Lindley step to
    ``W_{i+1}``, then independent erasures given the two sojourns.
    """
    if trials < 1000:
        raise ValueError("need at least 1000 trials")
    if p.kappa == 0:
        return Estimate(0.0, 0.0, 0, trials)
    g = lambda s: _rng.stream_rng(seed, 0, s)
    w0 = g(_rng.INITIAL).exponential(1.0 / (p.mu - p.lam), trials)
    a = g(_rng.ARRIVALS).exponential(1.0 / p.lam, trials)
    s = g(_rng.SERVICES).exponential(1.0 / p.mu, trials)
    w1 = np.maximum(w0 - a, 0.0) + s
    u = g(_rng.ERASURES).random((trials, 2))
    both = (u[:, 0] < -np.expm1(-p.kappa * w0)) & (u[:, 1] < -np.expm1(-p.kappa * w1))
    errors = int(both.sum())
    return Estimate(errors / trials, _rng.binomial_se(errors, trials), errors, trials)


def consecutive_pairs(lam: float, mu: float, trials: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Independent stationary ``(W_i, W_{i+1})`` pairs, for checking the conditional density."""
    check_stable(lam, mu)
    g = lambda s: _rng.stream_rng(seed, 0, s)
    w0 = g(_rng.INITIAL).exponential(1.0 / (mu - lam), trials)
    w1 = np.maximum(w0 - g(_rng.ARRIVALS).exponential(1.0 / lam, trials), 0.0) \
        + g(_rng.SERVICES).exponential(1.0 / mu, trials)
    return w0, w1
