"""Seeded random streams and Monte Carlo helpers shared by the simulation modules.

Every random quantity is drawn from a Philox (counter-based) generator keyed by
``(seed, trial, stream)``.  Within a stream, bit ``i`` consumes counter
position ``i``, so a trace of length ``n`` is a prefix of the trace of length
``n + 1`` and results never depend on how trials are batched or scheduled.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence, TypeVar

import numpy as np

# stream tags
ARRIVALS = 0
SERVICES = 1
INITIAL = 2
ERASURES = 3
MESSAGES = 4

T = TypeVar("T")


@dataclass(frozen=True)
class Estimate:
    """A Monte Carlo estimate; ``errors``/``trials`` are set for event-counting estimates."""

    estimate: float
    stderr: float
    errors: int = 0
    trials: int = 0


def stream_rng(seed: int, trial: int, stream: int) -> np.random.Generator:
    if seed < 0 or trial < 0:
        raise ValueError("seed and trial index must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, trial, stream])))


def batch_ranges(total: int, batch: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + batch, total)) for lo in range(0, total, batch)]


def map_batches(fn: Callable[[int, int], T], ranges: Sequence[tuple[int, int]],
                workers: int = 1) -> list[T]:
    """Apply ``fn(lo, hi)`` to every range, keeping input order."""
    if workers <= 1 or len(ranges) <= 1:
        return [fn(lo, hi) for lo, hi in ranges]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda r: fn(*r), ranges))


def binomial_se(errors: int, trials: int) -> float:
    if trials <= 0:
        return float("nan")
    p = errors / trials
    return float(np.sqrt(p * (1.0 - p) / trials))


def batch_means_se(x: np.ndarray, batches: int = 50) -> float:
    """Standard error of the mean of a correlated sequence via non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    size = x.size // batches
    if size < 2:
        return float(np.std(x, ddof=1) / np.sqrt(x.size)) if x.size > 1 else float("nan")
    means = x[: size * batches].reshape(batches, size).mean(axis=1)
    return float(np.std(means, ddof=1) / np.sqrt(batches))
