"""Interleaving wrapper: spread B inner codewords over one queue transmission.

Symbol ``j`` of codeword ``i`` goes out at stream position ``j * B + i``, so
symbols of one codeword are ``B`` positions apart and, once ``B`` exceeds the
length of every busy period, they see independent sojourns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from eqc import _rng, ldpc, polar
from eqc._rng import Estimate
from eqc.channel import ERASED, ErasureModel, apply_erasures, eqc_patterns
from eqc.queue import QueueParams, chernoff_rate, check_stable, sojourn_matrix


def choose_B(lam: float, mu: float, alpha: float) -> int:
    """Smallest depth strictly above ln(1/alpha) / (2 ln(lam + mu) - ln(4 lam mu))."""
    check_stable(lam, mu)
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return math.floor(math.log(1.0 / alpha) / chernoff_rate(lam, mu)) + 1


def default_alpha(n_inner: int) -> float:
    return 2.0 ** (-math.sqrt(n_inner))


@dataclass(frozen=True)
class InterleaverConfig:
    inner_n: int
    depth_b: int

    def __post_init__(self):
        if self.inner_n < 1 or self.depth_b < 1:
            raise ValueError("inner_n and depth_b must be at least 1")


def interleave(codewords) -> np.ndarray:
    c = np.asarray(codewords)
    if c.ndim != 2:
        raise ValueError("codewords must be a rectangular B x N array")
    return c.T.reshape(-1)


def deinterleave(y, config: InterleaverConfig) -> np.ndarray:
    y = np.asarray(y)
    N, B = config.inner_n, config.depth_b
    if y.shape[-1] != N * B:
        raise ValueError(f"stream length {y.shape[-1]} != N*B = {N * B}")
    return np.swapaxes(y.reshape(y.shape[:-1] + (N, B)), -1, -2)


class InnerCodeHandle:
    """Uniform view of an inner block code used by the wrapper.

    ``kind`` is ``"polar"``, ``"ldpc"`` or ``"ideal"``.  The ideal code is an
    analysis aid that decodes exactly when fewer than ``n - k`` symbols are
    erased; its decoder therefore needs the transmitted message.
    """

    def __init__(self, kind: str, code=None, k: int | None = None, n: int | None = None):
        self.kind, self.code = kind, code
        if kind == "polar":
            self.k, self.n = code.K, code.N
        elif kind == "ldpc":
            if not isinstance(code, ldpc.LdpcCode):
                code = ldpc.build_code(code)
                self.code = code
            self.k, self.n = code.k, code.n
            self._H = code.h.sparse()
        elif kind == "ideal":
            if k is None or n is None or not 0 <= k <= n:
                raise ValueError("ideal code needs 0 <= k <= n")
            self.k, self.n = k, n
        else:
            raise ValueError(f"unknown inner code kind {kind!r}")

    @classmethod
    def ideal(cls, n: int, rate: float) -> "InnerCodeHandle":
        return cls("ideal", k=int(math.floor(rate * n)), n=n)

    @property
    def rate(self) -> float:
        return self.k / self.n

    def decodable(self, erased: np.ndarray) -> np.ndarray:
        """Per-row decoding success for erasure patterns of shape ``(rows, n)``."""
        erased = np.asarray(erased, dtype=bool)
        if self.kind == "polar":
            return ~polar.erasure_propagate(erased)[:, self.code.info].any(axis=1)
        if self.kind == "ldpc":
            return ~ldpc.peel_patterns(self.code.h, erased, H=self._H).any(axis=1)
        return erased.sum(axis=1) < self.n - self.k

    def encode(self, message) -> np.ndarray:
        if self.kind == "polar":
            return polar.encode(self.code, message)
        if self.kind == "ldpc":
            return self.code.encode(message)
        m = np.asarray(message, dtype=np.uint8)
        return np.concatenate([m, np.zeros(self.n - self.k, dtype=np.uint8)])

    def decode(self, y, sent=None):
        y = np.asarray(y)
        if self.kind == "polar":
            return polar.sc_decode(self.code, y)
        if self.kind == "ldpc":
            c = ldpc.erasure_decode(self.code, y)
            return None if c is None else c[self.code.info_positions]
        if sent is None:
            raise ValueError("the ideal code decodes against the transmitted message")
        ok = np.count_nonzero(y == ERASED) < self.n - self.k
        return np.asarray(sent, dtype=np.uint8).copy() if ok else None


@dataclass(frozen=True)
class RoundTrip:
    decoded: list
    failures: np.ndarray

    @property
    def message_failed(self) -> bool:
        return bool(self.failures.any())


def wrapped_roundtrip(params: QueueParams, model: ErasureModel, inner: InnerCodeHandle,
                      config: InterleaverConfig, messages, seed: int, trial: int = 0) -> RoundTrip:
    """Encode B messages, interleave, send through one queue realization, deinterleave, decode."""
    if config.inner_n != inner.n:
        raise ValueError(f"config.inner_n={config.inner_n} != inner code length {inner.n}")
    msgs = np.asarray(messages, dtype=np.uint8)
    if msgs.shape != (config.depth_b, inner.k):
        raise ValueError(f"messages must have shape ({config.depth_b}, {inner.k})")
    stream = interleave(np.stack([inner.encode(m) for m in msgs]))
    pattern = eqc_patterns(params, model, stream.size, 1, seed, first_trial=trial)[0]
    rows = deinterleave(apply_erasures(stream, pattern), config)
    decoded, fails = [], np.zeros(config.depth_b, dtype=bool)
    for i, row in enumerate(rows):
        d = inner.decode(row, sent=msgs[i])
        fails[i] = d is None or not np.array_equal(d, msgs[i])
        decoded.append(d)
    return RoundTrip(decoded, fails)


@dataclass(frozen=True)
class WrappedBler:
    block: Estimate
    message: Estimate
    depth_b: int
    streams: int


def wrapped_bler(params: QueueParams, model: ErasureModel, inner: InnerCodeHandle, depth_b: int,
                 blocks: int, seed: int, workers: int = 1, max_elements: int = 1 << 22) -> WrappedBler:
    """Inner-block failure rate of the wrapper, from erasure patterns only.

    ``blocks`` inner blocks are decoded, taken from ``ceil(blocks / B)``
    independent streams of ``N * B`` symbols.  The message-level rate counts a
    stream as failed if any of its blocks fails.
    """
    if blocks < 1:
        raise ValueError("blocks must be positive")
    cfg = InterleaverConfig(inner.n, depth_b)
    L = inner.n * depth_b
    streams = -(-blocks // depth_b)
    per_batch = max(1, max_elements // L)

    def run(lo, hi):
        pats = eqc_patterns(params, model, L, hi - lo, seed, first_trial=lo)
        rows = deinterleave(pats, cfg).reshape(-1, inner.n)
        return ~inner.decodable(rows).reshape(hi - lo, depth_b)

    fails = np.concatenate(_rng.map_batches(run, _rng.batch_ranges(streams, per_batch), workers))
    block_fails = fails.reshape(-1)[:blocks]
    be = int(block_fails.sum())
    me = int(fails.any(axis=1).sum())
    return WrappedBler(Estimate(be / blocks, _rng.binomial_se(be, blocks), be, blocks),
                       Estimate(me / streams, _rng.binomial_se(me, streams), me, streams),
                       depth_b, streams)


def separation(config: InterleaverConfig) -> int:
    """Minimum stream distance between two symbols of the same inner codeword."""
    B, N = config.depth_b, config.inner_n
    if N < 2:
        return N * B
    where = np.argsort(interleave(np.arange(B * N).reshape(B, N))).reshape(B, N)
    return int(np.diff(where, axis=1).min())


def long_busy_period_rate(params: QueueParams, inner_n: int, depth_b: int, trials: int, seed: int,
                          batch_elements: int = 1 << 22) -> Estimate:
    """Fraction of ``N * B`` streams in which some busy period holds at least ``B`` stream bits."""
    L = inner_n * depth_b
    per_batch = max(1, batch_elements // L)
    hits = 0
    for lo, hi in _rng.batch_ranges(trials, per_batch):
        _, renew = sojourn_matrix(params, L, hi - lo, seed, "stationary", 0, lo)
        for row in renew:
            cuts = np.concatenate([[0], np.flatnonzero(row), [L]])
            hits += int(np.diff(np.unique(cuts)).max() >= depth_b)
    return Estimate(hits / trials, _rng.binomial_se(hits, trials), hits, trials)


def wrapped_synthetics(params: QueueParams, model: ErasureModel, n: int, depth_b: int, blocks: int,
                       seed: int, workers: int = 1, max_elements: int = 1 << 22):
    """Synthetic-channel erasure rates of a length-``2^n`` inner polar code behind the interleaver.

    Like :func:`eqc.polar.estimate_synthetics`, but the patterns are the
    deinterleaved rows of ``N * B`` streams, i.e. what the inner code sees.
    ``blocks`` rows are used.  Returns ``(z, stderr)``.
    """
    if blocks < 100:
        raise ValueError("need at least 100 blocks")
    N = 1 << n
    cfg = InterleaverConfig(N, depth_b)
    L = N * depth_b
    streams = -(-blocks // depth_b)

    def run(lo, hi):
        pats = eqc_patterns(params, model, L, hi - lo, seed, first_trial=lo)
        return polar.erasure_propagate(deinterleave(pats, cfg).reshape(-1, N))

    flags = np.concatenate(_rng.map_batches(run, _rng.batch_ranges(streams, max(1, max_elements // L)),
                                            workers))[:blocks]
    z = flags.mean(axis=0)
    return z, np.sqrt(z * (1 - z) / blocks)
