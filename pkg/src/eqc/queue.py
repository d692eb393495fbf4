"""Single-server FCFS queue driving the erasure queue-channel.

Sojourn times follow the Lindley recursion ``W[i] = max(W[i-1] - A[i], 0) + S[i]``
where ``A[i]`` is the gap between the arrivals of bits ``i-1`` and ``i`` and
``S[i]`` is the service time of bit ``i``.  Bit ``i`` opens a busy period
(a renewal) when it finds the queue empty, i.e. ``A[i] >= W[i-1]``.

Indices are 0-based throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from scipy.special import gammaln

from eqc import _rng
from eqc._rng import Estimate

DISTRIBUTIONS = ("exponential", "deterministic", "custom")
INIT_MODES = ("stationary", "empty")


class StabilityError(ValueError):
    """Raised when the arrival rate is not strictly below the service rate."""


def check_stable(lam: float, mu: float) -> None:
    if not (math.isfinite(lam) and math.isfinite(mu)) or lam <= 0 or mu <= 0:
        raise ValueError(f"rates must be positive and finite, got lambda={lam}, mu={mu}")
    if lam >= mu:
        raise StabilityError(f"queue is unstable: lambda={lam} >= mu={mu}")


def load_samples(path: str | Path) -> np.ndarray:
    """Read a sample file holding one positive decimal (seconds) per line."""
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                continue
            try:
                v = float(text)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: not a number: {text!r}") from None
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{path}:{lineno}: sample must be positive, got {v}")
            values.append(v)
    if not values:
        raise ValueError(f"{path}: no samples")
    return np.asarray(values)


@dataclass(frozen=True)
class QueueParams:
    lam: float
    mu: float
    arrival: str = "exponential"
    service: str = "exponential"
    arrival_samples: np.ndarray | None = field(default=None, repr=False, compare=False)
    service_samples: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for kind in (self.arrival, self.service):
            if kind not in DISTRIBUTIONS:
                raise ValueError(f"unknown distribution {kind!r}; expected one of {DISTRIBUTIONS}")
        if self.arrival == "custom" and self.arrival_samples is None:
            raise ValueError("custom arrival distribution needs arrival_samples")
        if self.service == "custom" and self.service_samples is None:
            raise ValueError("custom service distribution needs service_samples")
        check_stable(self.lam, self.mu)

    @classmethod
    def from_samples(cls, arrival_samples=None, service_samples=None, lam=None, mu=None,
                     arrival="exponential", service="exponential") -> "QueueParams":
        """Build params where custom distributions take their rate from the sample mean."""
        if arrival_samples is not None:
            arrival_samples = np.asarray(arrival_samples, dtype=float)
            arrival, lam = "custom", 1.0 / float(arrival_samples.mean())
        if service_samples is not None:
            service_samples = np.asarray(service_samples, dtype=float)
            service, mu = "custom", 1.0 / float(service_samples.mean())
        return cls(lam, mu, arrival, service, arrival_samples, service_samples)

    @property
    def is_mm1(self) -> bool:
        return self.arrival == "exponential" and self.service == "exponential"

    @property
    def load(self) -> float:
        return self.lam / self.mu


def _draw(kind: str, rate: float, samples, rng: np.random.Generator, size: int) -> np.ndarray:
    if kind == "exponential":
        return rng.standard_exponential(size) / rate
    if kind == "deterministic":
        return np.full(size, 1.0 / rate)
    return rng.choice(samples, size=size)


@njit(cache=True, nogil=True)
def _lindley(w_prev, a, s, out, renew):
    w = w_prev
    for i in range(a.size):
        renew[i] = a[i] >= w
        d = w - a[i]
        if d < 0.0:
            d = 0.0
        w = d + s[i]
        out[i] = w


@njit(cache=True, nogil=True)
def _lindley_rows(w_prev, a, s, out, renew):
    for t in range(a.shape[0]):
        w = w_prev[t]
        for i in range(a.shape[1]):
            renew[t, i] = a[t, i] >= w
            d = w - a[t, i]
            if d < 0.0:
                d = 0.0
            w = d + s[t, i]
            out[t, i] = w


def lindley(w_prev: float, interarrivals: np.ndarray, services: np.ndarray):
    """Run the recursion from the sojourn ``w_prev`` of the preceding bit.

    ``w_prev = 0`` models an empty queue.  Returns ``(sojourns, renewal_flags)``.
    """
    a = np.ascontiguousarray(interarrivals, dtype=float)
    s = np.ascontiguousarray(services, dtype=float)
    if a.shape != s.shape:
        raise ValueError("interarrival and service arrays differ in length")
    out = np.empty_like(a)
    renew = np.empty(a.shape, dtype=np.bool_)
    _lindley(float(w_prev), a, s, out, renew)
    return out, renew


def _check_init(params: QueueParams, init_mode: str) -> None:
    if init_mode not in INIT_MODES:
        raise ValueError(f"init_mode must be one of {INIT_MODES}, got {init_mode!r}")
    if init_mode == "stationary" and not params.is_mm1:
        raise ValueError("stationary start is only available for M/M/1; "
                         "use init_mode='empty' with a warm-up")


def _trial_samples(params: QueueParams, n: int, seed: int, trial: int, init_mode: str):
    a = _draw(params.arrival, params.lam, params.arrival_samples,
              _rng.stream_rng(seed, trial, _rng.ARRIVALS), n)
    s = _draw(params.service, params.mu, params.service_samples,
              _rng.stream_rng(seed, trial, _rng.SERVICES), n)
    if init_mode == "stationary":
        w0 = _rng.stream_rng(seed, trial, _rng.INITIAL).standard_exponential() / (params.mu - params.lam)
    else:
        w0 = 0.0
    return float(w0), a, s


@dataclass(frozen=True)
class SojournTrace:
    sojourns: np.ndarray
    busy_period_starts: np.ndarray
    interarrivals: np.ndarray
    services: np.ndarray
    w_prev: float
    seed: int
    init_mode: str
    trial: int = 0

    def __len__(self) -> int:
        return self.sojourns.size

    def renewal_flags(self) -> np.ndarray:
        flags = np.zeros(self.sojourns.size, dtype=bool)
        flags[self.busy_period_starts] = True
        return flags


def simulate_sojourns(params: QueueParams, n: int, seed: int, init_mode: str = "stationary",
                      warmup: int = 0, trial: int = 0) -> SojournTrace:
    """Simulate ``n`` consecutive sojourn times.

    With ``init_mode="stationary"`` (M/M/1 only) a virtual bit preceding the
    first one gets a sojourn drawn from Exp(mu - lambda).  With ``"empty"`` the
    first bit finds an idle server.  ``warmup`` extra bits are simulated first
    and dropped.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if warmup < 0:
        raise ValueError("warmup must be non-negative")
    _check_init(params, init_mode)
    w0, a, s = _trial_samples(params, n + warmup, seed, trial, init_mode)
    w, renew = lindley(w0, a, s)
    w_prev = w0 if warmup == 0 else float(w[warmup - 1])
    w, renew, a, s = w[warmup:], renew[warmup:], a[warmup:], s[warmup:]
    for arr in (w, a, s):
        arr.setflags(write=False)
    starts = np.flatnonzero(renew)
    starts.setflags(write=False)
    return SojournTrace(w, starts, a, s, w_prev, seed, init_mode, trial)


def sojourn_matrix(params: QueueParams, n: int, trials: int, seed: int,
                   init_mode: str = "stationary", warmup: int = 0, first_trial: int = 0):
    """Sojourns for ``trials`` independent traces, one row each.

    Row ``t`` equals ``simulate_sojourns(..., trial=first_trial + t).sojourns``.
    Returns ``(sojourns, renewal_flags)`` of shape ``(trials, n)``.
    """
    _check_init(params, init_mode)
    total = n + warmup
    a = np.empty((trials, total))
    s = np.empty((trials, total))
    w0 = np.empty(trials)
    for t in range(trials):
        w0[t], a[t], s[t] = _trial_samples(params, total, seed, first_trial + t, init_mode)
    w = np.empty_like(a)
    renew = np.empty(a.shape, dtype=np.bool_)
    _lindley_rows(w0, a, s, w, renew)
    return w[:, warmup:], renew[:, warmup:]


@dataclass(frozen=True)
class BusyPeriodStats:
    """Jobs per completed busy period.

    ``labels[i]`` is the busy period of bit ``i``; bits before the first
    observed renewal get ``-1``.  Two bits with distinct non-negative labels
    lie in different busy periods and see independent sojourns.
    """

    counts: np.ndarray
    labels: np.ndarray

    @property
    def num_periods(self) -> int:
        return int(self.counts.size)

    @property
    def empirical_tail(self) -> dict[int, float]:
        """``l -> fraction of completed periods with at least l jobs``."""
        if self.counts.size == 0:
            return {}
        ge = np.bincount(self.counts)[::-1].cumsum()[::-1]
        return {l: ge[l] / self.counts.size for l in range(1, ge.size)}

    def exceedances(self, l: int) -> int:
        """Number of completed periods with more than ``l`` jobs."""
        return int(np.count_nonzero(self.counts > l))

    def independent(self, i: int, j: int) -> bool:
        return self.labels[i] >= 0 and self.labels[j] >= 0 and self.labels[i] != self.labels[j]


def busy_period_counts(trace: SojournTrace) -> BusyPeriodStats:
    """Partition the trace into busy periods, keeping only completed ones.

    A period is complete when another renewal follows it inside the trace.  The
    leading segment before the first renewal is also dropped since its start
    was not observed.
    """
    n = len(trace)
    if n == 0:
        raise ValueError("empty trace")
    starts = np.asarray(trace.busy_period_starts)
    labels = np.full(n, -1, dtype=np.int64)
    if starts.size:
        labels[starts[0]:] = np.cumsum(trace.renewal_flags()[starts[0]:]) - 1
    counts = np.diff(starts).astype(np.int64)
    return BusyPeriodStats(counts, labels)


def chernoff_rate(lam: float, mu: float) -> float:
    """``2 ln(lam + mu) - ln(4 lam mu)``, the per-job decay rate of the busy-period tail bound."""
    return 2.0 * math.log(lam + mu) - math.log(4.0 * lam * mu)


def lemma1_tail_bound(lam: float, mu: float, l: int) -> float:
    """Chernoff bound ``(4 lam mu / (lam + mu)^2)^l`` on P(J > l) for M/M/1 busy periods."""
    check_stable(lam, mu)
    if l < 1:
        raise ValueError("l must be a positive count")
    return (4.0 * lam * mu / (lam + mu) ** 2) ** l


def gg1_tail_bound(nu: float, b: float, upsilon: float, eta: float) -> float:
    """Sub-exponential bound on P(J >= eta) for a G/G/1 busy period.

    ``nu, b`` are the sub-exponential parameters of the increments and
    ``upsilon`` their mean.  The two regimes meet at ``upsilon = nu^2 / b``,
    which is rejected.
    """
    if min(nu, b, upsilon, eta) <= 0:
        raise ValueError("nu, b, upsilon and eta must be positive")
    edge = nu * nu / b
    if upsilon == edge:
        raise ValueError("upsilon == nu^2/b lies on the regime boundary; bound undefined")
    if upsilon < edge:
        return math.exp(-eta * upsilon ** 2 / (2.0 * nu * nu))
    return math.exp(-eta * upsilon / (2.0 * b))


def busy_period_pmf(lam: float, mu: float, j) -> np.ndarray:
    """Exact M/M/1 law of the number of jobs served in a busy period."""
    check_stable(lam, mu)
    j = np.asarray(j, dtype=float)
    rho = lam / mu
    log_p = (gammaln(2 * j - 1) - gammaln(j) - gammaln(j + 1)
             + (j - 1) * math.log(rho) - (2 * j - 1) * math.log1p(rho))
    return np.exp(log_p)


def independence_window(lam: float, mu: float, alpha: float) -> int:
    """Smallest power of two strictly above ln(1/alpha) / (2 ln(lam+mu) - ln(4 lam mu))."""
    check_stable(lam, mu)
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    bound = math.log(1.0 / alpha) / chernoff_rate(lam, mu)
    n = 1
    while n <= bound:
        n *= 2
    return n


def renewal_gap_bound(lam: float, mu: float, window: int) -> float:
    """Upper bound on P(no renewal among the middle window bits) built from the Chernoff tail.

    Uses ``P(J = j) <= P(J > j - 1) <= r^(j-1)`` and ``(j - window)^+ <= j`` in
    the sum of :func:`renewal_gap_exact`; may exceed 1 (vacuous) for small windows.
    """
    check_stable(lam, mu)
    r = 4.0 * lam * mu / (lam + mu) ** 2
    n = window
    tail = ((n + 1) * r ** n - n * r ** (n + 1)) / (1.0 - r) ** 2
    return tail * (mu - lam) / mu


def renewal_gap_exact(lam: float, mu: float, window: int, tol: float = 1e-16) -> float:
    """Exact stationary probability that ``window`` consecutive bits hold no renewal (M/M/1).

    The bit just before the window sits at a uniform position of a
    size-biased busy period; the window is renewal-free iff at least
    ``window`` bits of that period remain, giving
    ``sum_j (j - window)^+ P(J = j) / E[J]``.
    """
    check_stable(lam, mu)
    total, lo, chunk = 0.0, window + 1, 4096
    while True:
        j = np.arange(lo, lo + chunk, dtype=float)
        terms = (j - window) * busy_period_pmf(lam, mu, j)
        total += float(terms.sum())
        if terms[-1] < tol * max(total, 1e-300) or terms[-1] == 0.0:
            break
        lo += chunk
    return total * (mu - lam) / mu


def renewal_gap_estimate(params: QueueParams, window: int, trials: int, seed: int,
                         init_mode: str | None = None, warmup: int = 10_000,
                         batch: int = 256, workers: int = 1) -> Estimate:
    """Monte Carlo probability that bits ``window .. 2*window-1`` of a ``3*window`` trace hold no renewal."""
    if window < 1 or trials < 1:
        raise ValueError("window and trials must be positive")
    if init_mode is None:
        init_mode = "stationary" if params.is_mm1 else "empty"
    if init_mode == "stationary":
        warmup = 0

    def run(lo, hi):
        _, renew = sojourn_matrix(params, 3 * window, hi - lo, seed, init_mode, warmup, lo)
        return int(np.count_nonzero(~renew[:, window:2 * window].any(axis=1)))

    errors = sum(_rng.map_batches(run, _rng.batch_ranges(trials, batch), workers))
    return Estimate(errors / trials, _rng.binomial_se(errors, trials), errors, trials)
