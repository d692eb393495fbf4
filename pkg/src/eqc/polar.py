"""Polar codes over the erasure queue-channel.

Convention: ``x = u F G`` with ``F`` the bit-reversal permutation and ``G`` the
n-th Kronecker power of ``[[1, 0], [1, 1]]``.  Equivalently, splitting ``u``
into halves ``a = T(u[:N/2])`` and ``b = T(u[N/2:])`` gives
``x[2j] = a[j] ^ b[j]`` and ``x[2j+1] = b[j]``, which is the recursion used by
the erasure propagation and the SC decoder below.  Synthetic index ``i`` is
therefore "minus" at the first split when its most significant bit is 0.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from eqc import _rng
from eqc._rng import Estimate
from eqc.channel import ERASED, ErasureModel, apply_erasures, eqc_patterns
from eqc.queue import QueueParams


def _log2(N: int) -> int:
    n = int(N).bit_length() - 1
    if N < 1 or (1 << n) != N:
        raise ValueError(f"length {N} is not a power of two")
    return n


def bit_reversal(n: int) -> np.ndarray:
    idx = np.arange(1 << n)
    rev = np.zeros_like(idx)
    for b in range(n):
        rev |= ((idx >> b) & 1) << (n - 1 - b)
    return rev


def polar_transform(u, n: int | None = None) -> np.ndarray:
    """``x = u F_N G_N`` over GF(2); works on the last axis, so batches are fine."""
    u = np.asarray(u, dtype=np.uint8)
    N = u.shape[-1]
    k = _log2(N)
    if n is not None and n != k:
        raise ValueError(f"expected length 2^{n}, got {N}")
    x = u[..., bit_reversal(k)].copy()
    half = 1
    while half < N:
        # x[j] ^= x[j + half] for every j whose `half` bit is clear
        v = x.reshape(x.shape[:-1] + (N // (2 * half), 2, half))
        v[..., 0, :] ^= v[..., 1, :]
        half *= 2
    return x


def erasure_propagate(pattern) -> np.ndarray:
    """Synthetic-channel erasure flags for one or many patterns (True = erased).

    Pairs adjacent entries: the minus output is erased if either input is,
    the plus output only if both are; recurse on each half.
    """
    e = np.asarray(getattr(pattern, "bits", pattern), dtype=bool)
    _log2(e.shape[-1])
    return _propagate(e)


def _propagate(e: np.ndarray) -> np.ndarray:
    if e.shape[-1] == 1:
        return e.copy()
    a, b = e[..., 0::2], e[..., 1::2]
    return np.concatenate([_propagate(a | b), _propagate(a & b)], axis=-1)


def bec_z(n: int, p: float) -> np.ndarray:
    """Exact synthetic erasure probabilities for a memoryless erasure channel."""
    z = np.array([p], dtype=float)
    for _ in range(n):
        z = _bec_step(z)
    return z


def _bec_step(z: np.ndarray) -> np.ndarray:
    # each index splits into (minus, plus) at the next level down; the most
    # significant bit was fixed first, so children go to the low positions
    out = np.empty(2 * z.size)
    out[0::2] = 2 * z - z * z
    out[1::2] = z * z
    return out


@dataclass(frozen=True)
class PolarCode:
    n: int
    frozen: np.ndarray
    z_estimates: np.ndarray | None = None
    design: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return 1 << self.n

    @property
    def K(self) -> int:
        return self.N - self.frozen.size

    @property
    def rate(self) -> float:
        return self.K / self.N

    @property
    def frozen_mask(self) -> np.ndarray:
        m = np.zeros(self.N, dtype=bool)
        m[self.frozen] = True
        return m

    @property
    def info(self) -> np.ndarray:
        return np.flatnonzero(~self.frozen_mask)

    def to_text(self) -> str:
        lines = [f"polar n={self.n} K={self.K}"]
        lines.append("design " + " ".join(f"{k}={v}" for k, v in self.design.items()))
        lines.append("frozen " + " ".join(str(int(i)) for i in self.frozen))
        z = self.z_estimates if self.z_estimates is not None else np.full(self.N, np.nan)
        lines.append("z " + " ".join(repr(float(v)) for v in z))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PolarCode":
        rows = text.splitlines()
        if len(rows) < 4 or not rows[0].startswith("polar "):
            raise ValueError("not a polar code file")
        head = dict(tok.split("=", 1) for tok in rows[0].split()[1:])
        n, K = int(head["n"]), int(head["K"])
        design = dict(tok.split("=", 1) for tok in rows[1].split()[1:])
        frozen = np.array([int(t) for t in rows[2].split()[1:]], dtype=np.int64)
        z = np.array([float(t) for t in rows[3].split()[1:]])
        if frozen.size != (1 << n) - K or z.size != 1 << n:
            raise ValueError("polar code file is inconsistent with its header")
        return cls(n, frozen, None if np.all(np.isnan(z)) else z, design)


def construct(z_estimates, K: int, design: dict | None = None) -> PolarCode:
    """Freeze the ``N - K`` least reliable synthetic channels (largest z; ties freeze the lower index)."""
    z = np.asarray(z_estimates, dtype=float)
    N = z.size
    n = _log2(N)
    if not 0 <= K <= N:
        raise ValueError(f"K={K} outside [0, {N}]")
    order = np.lexsort((np.arange(N), -z))
    frozen = np.sort(order[: N - K])
    capacity = 1.0 - float(z.mean())
    if K > 0 and K / N >= capacity:
        warnings.warn(f"rate {K / N:.4f} is not below the estimated capacity per use {capacity:.4f}",
                      RuntimeWarning, stacklevel=2)
    return PolarCode(n, frozen, z.copy(), dict(design or {}))


def estimate_synthetics(params: QueueParams, model: ErasureModel, n: int, trials: int, seed: int,
                        batch: int = 512, workers: int = 1):
    """Monte Carlo erasure probability of every synthetic channel on the EQC.

    Returns ``(z, stderr)``; ``z[i]`` is the fraction of stationary
    transmissions in which index ``i`` cannot be determined from the output
    and the earlier ``u`` bits.
    """
    if trials < 100:
        raise ValueError("need at least 100 trials")
    N = 1 << n

    def run(lo, hi):
        pats = eqc_patterns(params, model, N, hi - lo, seed, first_trial=lo)
        return erasure_propagate(pats).sum(axis=0)

    counts = sum(_rng.map_batches(run, _rng.batch_ranges(trials, batch), workers))
    z = counts / trials
    return z, np.sqrt(z * (1 - z) / trials)


def encode(code: PolarCode, message) -> np.ndarray:
    m = np.asarray(message, dtype=np.uint8)
    if m.shape[-1] != code.K:
        raise ValueError(f"message length {m.shape[-1]} != K={code.K}")
    u = np.zeros(m.shape[:-1] + (code.N,), dtype=np.uint8)
    u[..., code.info] = m
    return polar_transform(u)


class DecodeFailure(Exception):
    pass


def _sc(y: np.ndarray, frozen: np.ndarray, u_out: np.ndarray, offset: int) -> np.ndarray:
    """Decode ``u[offset:offset+len(y)]`` into ``u_out``; returns the re-encoded ``x``."""
    N = y.size
    if N == 1:
        if frozen[offset]:
            u_out[offset] = 0
        elif y[0] == ERASED:
            raise DecodeFailure(offset)
        else:
            u_out[offset] = y[0]
        return u_out[offset:offset + 1].copy()
    y0, y1 = y[0::2], y[1::2]
    known = (y0 != ERASED) & (y1 != ERASED)
    minus = np.where(known, y0 ^ y1, ERASED).astype(np.int8)
    a = _sc(minus, frozen, u_out, offset)
    plus = np.where(y1 != ERASED, y1, np.where(y0 != ERASED, y0 ^ a, ERASED)).astype(np.int8)
    b = _sc(plus, frozen, u_out, offset + N // 2)
    x = np.empty(N, dtype=np.int8)
    x[0::2] = a ^ b
    x[1::2] = b
    return x


def sc_decode(code: PolarCode, y):
    """Successive-cancellation decoding of a {0, 1, ERASED} word.

    Returns the message bits, or ``None`` if some information bit is not
    determined by the received symbols and the previously decoded bits.
    """
    y = np.asarray(y)
    if y.shape != (code.N,):
        raise ValueError(f"received word must have length {code.N}")
    if not np.all((y == 0) | (y == 1) | (y == ERASED)):
        raise ValueError("received symbols must be 0, 1 or ERASED")
    u = np.zeros(code.N, dtype=np.int8)
    try:
        _sc(y.astype(np.int8), code.frozen_mask, u, 0)
    except DecodeFailure:
        return None
    return u[code.info].astype(np.uint8)


def bler(params: QueueParams, model: ErasureModel, code: PolarCode, trials: int, seed: int,
         slow: bool = False, batch: int = 1024, workers: int = 1, return_trials: bool = False):
    """Block error rate of SC decoding over the EQC.

    The fast path only inspects erasure patterns: a block fails iff an
    unfrozen synthetic channel is erased.  ``slow=True`` instead encodes a
    random message per trial, sends it through the channel and runs
    ``sc_decode``; both paths see the same patterns.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    if code.K == 0:
        fails = np.zeros(trials, dtype=bool)
    else:
        info = code.info

        def run(lo, hi):
            pats = eqc_patterns(params, model, code.N, hi - lo, seed, first_trial=lo)
            if not slow:
                return erasure_propagate(pats)[:, info].any(axis=1)
            out = np.empty(hi - lo, dtype=bool)
            for t in range(hi - lo):
                msg = _rng.stream_rng(seed, lo + t, _rng.MESSAGES).integers(0, 2, code.K, dtype=np.uint8)
                dec = sc_decode(code, apply_erasures(encode(code, msg), pats[t]))
                out[t] = dec is None or not np.array_equal(dec, msg)
            return out

        fails = np.concatenate(_rng.map_batches(run, _rng.batch_ranges(trials, batch), workers))
    errors = int(fails.sum())
    est = Estimate(errors / trials, _rng.binomial_se(errors, trials), errors, trials)
    return (est, fails) if return_trials else est


def polarization_fractions(z_estimates, epsilon: float, stderr=None) -> dict:
    """Fractions of synthetic channels with z below ``epsilon`` and above ``1 - epsilon``.

    When per-index standard errors are given, a plug-in standard error of
    each fraction is reported too (each index classified with probability
    Phi((eps - z) / se)).
    """
    if not 0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 0.5)")
    z = np.asarray(z_estimates, dtype=float)
    out = {"low_fraction": float(np.mean(z < epsilon)), "high_fraction": float(np.mean(z > 1 - epsilon))}
    if stderr is not None:
        from scipy.stats import norm

        se = np.maximum(np.asarray(stderr, dtype=float), 1e-12)
        q_low = norm.cdf((epsilon - z) / se)
        q_high = norm.cdf((z - (1 - epsilon)) / se)
        out["low_stderr"] = float(np.sqrt(np.sum(q_low * (1 - q_low))) / z.size)
        out["high_stderr"] = float(np.sqrt(np.sum(q_high * (1 - q_high))) / z.size)
    return out
