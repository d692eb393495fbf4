"""Erasure models p(W), erasure patterns over queue traces, and EQC capacity."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from eqc import _rng
from eqc._rng import Estimate
from eqc.queue import QueueParams, SojournTrace, check_stable, simulate_sojourns, sojourn_matrix

ERASED = -1  # erasure symbol in {0, 1, e} vectors


class UnsupportedQuery(TypeError):
    """The model's erasure probability is not a function of the sojourn time."""


class ErasureModel:
    """Base class; concrete models map sojourn times to erasure probabilities."""

    kind: str = ""
    time_driven = True

    def probability(self, w):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def describe(self) -> str:
        body = ",".join(f"{k}={v}" for k, v in self.to_dict().items() if k != "kind")
        return f"{self.kind}({body})"


@dataclass(frozen=True, eq=False)
class ExponentialErasure(ErasureModel):
    """Decoherence model p(W) = 1 - exp(-kappa W)."""

    kappa: float
    kind = "exponential"

    def __post_init__(self):
        if not self.kappa >= 0:
            raise ValueError("kappa must be non-negative")

    def probability(self, w):
        return -np.expm1(-self.kappa * np.asarray(w, dtype=float))

    def to_dict(self):
        return {"kind": self.kind, "kappa": self.kappa}


@dataclass(frozen=True, eq=False)
class ConstantErasure(ErasureModel):
    """Memoryless erasure channel: every bit erased with the same probability."""

    p: float
    kind = "constant"

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")

    def probability(self, w):
        return np.full(np.shape(w), self.p, dtype=float)

    def to_dict(self):
        return {"kind": self.kind, "p": self.p}


@dataclass(frozen=True, eq=False)
class StepErasure(ErasureModel):
    """Piecewise-constant p(W): ``levels[k]`` applies once ``k`` thresholds are reached."""

    thresholds: tuple
    levels: tuple
    kind = "step"

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=float)
        lv = np.asarray(self.levels, dtype=float)
        if lv.size != t.size + 1:
            raise ValueError("step model needs exactly one more level than thresholds")
        if np.any(np.diff(t) <= 0) or np.any(t < 0):
            raise ValueError("thresholds must be non-negative and strictly increasing")
        if np.any(lv < 0) or np.any(lv > 1):
            raise ValueError("levels must lie in [0, 1]")
        if np.any(np.diff(lv) < 0):
            raise ValueError("levels must be non-decreasing in the sojourn time")
        object.__setattr__(self, "thresholds", tuple(float(x) for x in t))
        object.__setattr__(self, "levels", tuple(float(x) for x in lv))

    def probability(self, w):
        idx = np.searchsorted(np.asarray(self.thresholds), np.asarray(w, dtype=float), side="right")
        return np.asarray(self.levels)[idx]

    def to_dict(self):
        return {"kind": self.kind, "thresholds": list(self.thresholds), "levels": list(self.levels)}


@dataclass(frozen=True, eq=False)
class MarkovErasure(ErasureModel):
    """Erasure probability driven by a finite-state Markov chain that steps once per bit."""

    states: tuple
    transition: tuple
    initial: tuple
    kind = "markov"
    time_driven = False

    def __post_init__(self):
        p = np.asarray(self.states, dtype=float)
        P = np.asarray(self.transition, dtype=float)
        pi0 = np.asarray(self.initial, dtype=float)
        k = p.size
        if P.shape != (k, k) or pi0.shape != (k,):
            raise ValueError("transition must be k x k and initial of length k")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("state probabilities must lie in [0, 1]")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("transition rows must be stochastic (sum to 1 within 1e-12)")
        if np.any(pi0 < 0) or abs(pi0.sum() - 1.0) > 1e-12:
            raise ValueError("initial must be a probability distribution")
        object.__setattr__(self, "states", tuple(float(x) for x in p))
        object.__setattr__(self, "transition", tuple(tuple(float(x) for x in row) for row in P))
        object.__setattr__(self, "initial", tuple(float(x) for x in pi0))

    def probability(self, w):
        raise UnsupportedQuery("markov erasure probability is state-driven, not a function of W")

    def stationary(self) -> np.ndarray:
        P = np.asarray(self.transition)
        vals, vecs = np.linalg.eig(P.T)
        v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
        return v / v.sum()

    def to_dict(self):
        return {"kind": self.kind, "states": list(self.states),
                "transition": [list(r) for r in self.transition], "initial": list(self.initial)}


def model_from_dict(d: dict) -> ErasureModel:
    """Inverse of ``ErasureModel.to_dict`` (the config-file fragment)."""
    d = dict(d)
    kind = d.pop("kind", None)
    builders = {
        "exponential": (ExponentialErasure, {"kappa"}),
        "constant": (ConstantErasure, {"p"}),
        "step": (StepErasure, {"thresholds", "levels"}),
        "markov": (MarkovErasure, {"states", "transition", "initial"}),
    }
    if kind not in builders:
        raise ValueError(f"unknown erasure model kind {kind!r}")
    cls, keys = builders[kind]
    if set(d) != keys:
        raise ValueError(f"{kind} model takes keys {sorted(keys)}, got {sorted(d)}")
    return cls(**d)


def step_approximation(kappa: float, levels: int, rule: str = "lower") -> StepErasure:
    """Step approximation of ``1 - exp(-kappa W)`` on an equal-probability grid.

    Thresholds sit where p(W) crosses ``j / levels``.  ``rule="lower"`` takes
    the value at the left end of each cell, giving p_k <= p with p_k increasing
    to p as ``levels`` doubles; ``rule="midpoint"`` evaluates p at the middle
    of each finite cell.
    """
    if kappa <= 0 or levels < 2:
        raise ValueError("need kappa > 0 and at least two levels")
    grid = np.arange(1, levels) / levels
    thresholds = -np.log1p(-grid) / kappa
    if rule == "lower":
        vals = np.concatenate([[0.0], grid])
    elif rule == "midpoint":
        edges = np.concatenate([[0.0], thresholds])
        mids = 0.5 * (edges[:-1] + edges[1:])
        vals = np.concatenate([-np.expm1(-kappa * mids), [1.0 - 0.5 / levels]])
    else:
        raise ValueError("rule must be 'lower' or 'midpoint'")
    return StepErasure(tuple(thresholds), tuple(vals))


def erasure_probability(model: ErasureModel, w: float) -> float:
    if not model.time_driven:
        raise UnsupportedQuery("markov erasure probability is state-driven, not a function of W")
    if w < 0:
        raise ValueError("sojourn time must be non-negative")
    return float(model.probability(w))


@dataclass(frozen=True)
class ErasurePattern:
    """Erasure indicators for one transmission (True = erased)."""

    bits: np.ndarray
    source: str = ""

    def __len__(self) -> int:
        return self.bits.size

    @property
    def erased_fraction(self) -> float:
        return float(self.bits.mean())


def _markov_walk(model: MarkovErasure, u0: np.ndarray, ue: np.ndarray, ut: np.ndarray) -> np.ndarray:
    """Vectorised chain walk over rows; ``u0`` picks the initial state, then per bit draw then step."""
    probs = np.asarray(model.states)
    cum = np.cumsum(np.asarray(model.transition), axis=1)
    cum[:, -1] = 1.0
    init = np.cumsum(model.initial)
    init[-1] = 1.0
    state = np.searchsorted(init, u0, side="right")
    erased = np.empty(ue.shape, dtype=bool)
    for i in range(ue.shape[1]):
        erased[:, i] = ue[:, i] < probs[state]
        state = (ut[:, i, None] >= cum[state]).sum(axis=1)
        state = np.minimum(state, probs.size - 1)
    return erased


def _erasure_draws(model: ErasureModel, w: np.ndarray, seed: int, first_trial: int) -> np.ndarray:
    trials, n = w.shape
    if model.time_driven:
        u = np.empty((trials, n))
        for t in range(trials):
            u[t] = _rng.stream_rng(seed, first_trial + t, _rng.ERASURES).random(n)
        return u < model.probability(w)
    u0 = np.empty(trials)
    ue = np.empty((trials, n))
    ut = np.empty((trials, n))
    for t in range(trials):
        g = _rng.stream_rng(seed, first_trial + t, _rng.ERASURES)
        u0[t] = g.random()
        ue[t] = g.random(n)
        ut[t] = g.random(n)
    return _markov_walk(model, u0, ue, ut)


def sample_pattern(trace: SojournTrace, model: ErasureModel, seed: int) -> ErasurePattern:
    """Erase bit ``i`` with probability p(W_i) independently given the trace.

    The markov model ignores the sojourns and walks its chain one step per bit.
    """
    if len(trace) == 0:
        raise ValueError("empty trace")
    bits = _erasure_draws(model, trace.sojourns[None, :], seed, trace.trial)[0]
    bits.setflags(write=False)
    return ErasurePattern(bits, f"seed={trace.seed},trial={trace.trial};{model.describe()}")


def eqc_patterns(params: QueueParams, model: ErasureModel, n: int, trials: int, seed: int,
                 first_trial: int = 0, init_mode: str | None = None, warmup: int = 0) -> np.ndarray:
    """Erasure patterns of ``trials`` independent transmissions of ``n`` bits, one per row.

    Row ``t`` is the pattern of ``sample_pattern(simulate_sojourns(..., seed, trial=t), model, seed)``.
    """
    if init_mode is None:
        init_mode = "stationary" if params.is_mm1 else "empty"
    if isinstance(model, ConstantErasure) and model.p in (0.0, 1.0):
        return np.full((trials, n), model.p == 1.0)
    w, _ = sojourn_matrix(params, n, trials, seed, init_mode, warmup, first_trial)
    return _erasure_draws(model, w, seed, first_trial)


def apply_erasures(x, pattern) -> np.ndarray:
    """Channel output: ``ERASED`` (-1) where the pattern erases, the input bit elsewhere."""
    x = np.asarray(x)
    bits = pattern.bits if isinstance(pattern, ErasurePattern) else np.asarray(pattern, dtype=bool)
    if x.shape[-1] != bits.shape[-1]:
        raise ValueError(f"length mismatch: {x.shape[-1]} symbols vs {bits.shape[-1]} pattern bits")
    return np.where(bits, ERASED, x).astype(np.int8)


def mean_erasure_analytic(lam: float, mu: float, kappa: float) -> float:
    """Stationary E[p(W)] = kappa / (mu - lam + kappa) for M/M/1 and the exponential model."""
    check_stable(lam, mu)
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    return kappa / (mu - lam + kappa)


def capacity_analytic(lam: float, mu: float, kappa: float) -> dict:
    """Capacity lam * E[1 - p(W)] of the M/M/1 EQC with exponential erasures."""
    check_stable(lam, mu)
    per_use = (mu - lam) / (mu - lam + kappa)
    return {"bits_per_sec": lam * per_use, "bits_per_use": per_use}


def optimal_lambda(mu: float, kappa: float) -> dict:
    """Arrival rate maximising ``lam (mu - lam) / (mu - lam + kappa)``."""
    if mu <= 0 or kappa <= 0:
        raise ValueError("mu and kappa must be positive")
    lam = mu - (math.sqrt(kappa * kappa + mu * kappa) - kappa)
    return {"lambda_star": lam, "capacity_at_star": capacity_analytic(lam, mu, kappa)["bits_per_sec"]}


def capacity_mc(params: QueueParams, model: ErasureModel, n: int, seed: int,
                warmup: int | None = None, batches: int = 50) -> Estimate:
    """Monte Carlo capacity in bits/sec from one long trace.

    Non-M/M/1 queues start empty and need ``warmup`` dummy bits.  The standard
    error uses batch means since consecutive sojourns are correlated.
    """
    if n < 1000:
        raise ValueError("n must be at least 1000")
    if params.is_mm1 and warmup is None:
        init, warmup = "stationary", 0
    elif warmup is None:
        raise ValueError("non-M/M/1 queues need an explicit warm-up length")
    else:
        init = "empty" if warmup > 0 or not params.is_mm1 else "stationary"
    trace = simulate_sojourns(params, n, seed, init, warmup)
    if model.time_driven:
        clear = 1.0 - model.probability(trace.sojourns)
    else:
        clear = (~sample_pattern(trace, model, seed).bits).astype(float)
    return Estimate(params.lam * float(clear.mean()), params.lam * _rng.batch_means_se(clear, batches))
