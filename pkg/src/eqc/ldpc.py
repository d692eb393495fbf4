"""LDPC codes on the erasure queue-channel: alist I/O, systematic encoding, peeling decoding."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from numba import njit

from eqc import _rng, gf2
from eqc._rng import Estimate
from eqc.channel import ERASED, ErasureModel, apply_erasures, eqc_patterns
from eqc.queue import QueueParams


class AlistError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class AlistDimensionError(AlistError):
    pass


class AlistIndexError(AlistError):
    pass


class AlistPaddingError(AlistError):
    pass


class AlistConsistencyError(AlistError):
    pass


@dataclass(frozen=True)
class ParityCheckMatrix:
    """Sparse binary parity-check matrix; adjacency lists are 0-based and sorted."""

    n: int
    m: int
    col_adj: tuple
    row_adj: tuple
    source: str = ""

    @classmethod
    def from_dense(cls, H, source: str = "") -> "ParityCheckMatrix":
        H = np.asarray(H, dtype=np.uint8)
        m, n = H.shape
        cols = tuple(tuple(int(r) for r in np.flatnonzero(H[:, j])) for j in range(n))
        rows = tuple(tuple(int(c) for c in np.flatnonzero(H[i])) for i in range(m))
        return cls(n, m, cols, rows, source)

    def dense(self) -> np.ndarray:
        H = np.zeros((self.m, self.n), dtype=np.uint8)
        for j, rows in enumerate(self.col_adj):
            H[list(rows), j] = 1
        return H

    def sparse(self) -> sp.csr_matrix:
        r = np.concatenate([np.asarray(c, dtype=np.int64) for c in self.col_adj]) if self.n else []
        c = np.repeat(np.arange(self.n), [len(x) for x in self.col_adj])
        return sp.csr_matrix((np.ones(len(c), dtype=np.int32), (r, c)), shape=(self.m, self.n))

    @property
    def col_degrees(self) -> list[int]:
        return [len(c) for c in self.col_adj]

    @property
    def row_degrees(self) -> list[int]:
        return [len(r) for r in self.row_adj]


def _ints(line: str, lineno: int) -> list[int]:
    try:
        return [int(t) for t in line.split()]
    except ValueError:
        raise AlistDimensionError(lineno, f"non-integer token in {line.strip()!r}") from None


def _adjacency(line: str, lineno: int, degree: int, max_degree: int, limit: int, what: str):
    vals = _ints(line, lineno)
    if len(vals) > max_degree or len(vals) < degree:
        raise AlistDimensionError(lineno, f"{what}: expected {degree} entries padded to at most "
                                          f"{max_degree}, got {len(vals)} tokens")
    head, pad = vals[:degree], vals[degree:]
    if any(v == 0 for v in head) or any(v != 0 for v in pad):
        raise AlistPaddingError(lineno, f"{what}: zero padding must follow exactly {degree} entries")
    if any(not 1 <= v <= limit for v in head):
        raise AlistIndexError(lineno, f"{what}: index out of range 1..{limit}")
    if len(set(head)) != len(head):
        raise AlistIndexError(lineno, f"{what}: duplicate index")
    return tuple(sorted(v - 1 for v in head))


def parse_alist(text: str, source: str = "") -> ParityCheckMatrix:
    """Parse a MacKay alist file (1-based indices, rows zero-padded to the maximum degree)."""
    lines = [(i, ln) for i, ln in enumerate(text.splitlines(), 1) if ln.strip()]

    def take(k):
        if k >= len(lines):
            last = lines[-1][0] if lines else 0
            raise AlistDimensionError(last + 1, "unexpected end of file")
        return lines[k]

    ln, t = take(0)
    dims = _ints(t, ln)
    if len(dims) != 2 or min(dims) < 1:
        raise AlistDimensionError(ln, "first line must be 'n m' with positive sizes")
    n, m = dims
    ln, t = take(1)
    maxes = _ints(t, ln)
    if len(maxes) != 2:
        raise AlistDimensionError(ln, "second line must be 'max_col_degree max_row_degree'")
    max_col, max_row = maxes
    ln, t = take(2)
    col_deg = _ints(t, ln)
    if len(col_deg) != n or max(col_deg) != max_col or min(col_deg) < 0:
        raise AlistDimensionError(ln, f"need {n} column degrees with maximum {max_col}")
    ln, t = take(3)
    row_deg = _ints(t, ln)
    if len(row_deg) != m or max(row_deg) != max_row or min(row_deg) < 0:
        raise AlistDimensionError(ln, f"need {m} row degrees with maximum {max_row}")
    cols, col_lines = [], []
    for j in range(n):
        ln, t = take(4 + j)
        cols.append(_adjacency(t, ln, col_deg[j], max_col, m, f"column {j + 1}"))
        col_lines.append(ln)
    rows, row_lines = [], []
    for i in range(m):
        ln, t = take(4 + n + i)
        rows.append(_adjacency(t, ln, row_deg[i], max_row, n, f"row {i + 1}"))
        row_lines.append(ln)
    if len(lines) > 4 + n + m:
        raise AlistDimensionError(lines[4 + n + m][0], "trailing content after row lists")
    from_cols = [set() for _ in range(m)]
    for j, c in enumerate(cols):
        for i in c:
            from_cols[i].add(j)
    for i, r in enumerate(rows):
        if set(r) != from_cols[i]:
            extra = sorted(set(r) - from_cols[i]) or sorted(from_cols[i] - set(r))
            raise AlistConsistencyError(row_lines[i], f"row {i + 1} and the column lists disagree "
                                                      f"at column {extra[0] + 1}")
    return ParityCheckMatrix(n, m, tuple(cols), tuple(rows), source)


def to_alist(h: ParityCheckMatrix) -> str:
    """Canonical alist text: single spaces, zero padding to the maximum degree, final newline."""
    max_col = max(h.col_degrees, default=0)
    max_row = max(h.row_degrees, default=0)

    def pad(adj, width):
        vals = [str(v + 1) for v in adj] + ["0"] * (width - len(adj))
        return " ".join(vals)

    out = [f"{h.n} {h.m}", f"{max_col} {max_row}",
           " ".join(map(str, h.col_degrees)), " ".join(map(str, h.row_degrees))]
    out += [pad(c, max_col) for c in h.col_adj]
    out += [pad(r, max_row) for r in h.row_adj]
    return "\n".join(out) + "\n"


def read_alist(path: str | Path) -> ParityCheckMatrix:
    return parse_alist(Path(path).read_text(), source=str(path))


def regular_ldpc(n: int, dv: int = 3, dc: int = 6, seed: int = 0) -> ParityCheckMatrix:
    """Random ``(dv, dc)``-regular parity-check matrix without repeated edges (socket model)."""
    if (n * dv) % dc:
        raise ValueError(f"n*dv={n * dv} is not divisible by dc={dc}")
    m = n * dv // dc
    rng = np.random.default_rng(seed)
    var = np.repeat(np.arange(n), dv)
    chk = rng.permutation(np.repeat(np.arange(m), dc))
    for _ in range(10_000):
        key = var * m + chk
        order = np.argsort(key, kind="stable")
        dup = order[1:][np.diff(key[order]) == 0]
        if dup.size == 0:
            break
        # swap each duplicated socket with a random partner socket
        partners = rng.integers(0, chk.size, dup.size)
        chk[dup], chk[partners] = chk[partners], chk[dup].copy()
    else:
        raise RuntimeError("could not remove repeated edges")
    H = np.zeros((m, n), dtype=np.uint8)
    H[chk, var] = 1
    return ParityCheckMatrix.from_dense(H, source=f"regular({dv},{dc}) n={n} seed={seed}")


@dataclass(frozen=True)
class LdpcCode:
    """Code with a systematic encoder: message bits sit on the non-pivot columns."""

    h: ParityCheckMatrix
    rank: int
    pivots: np.ndarray
    info_positions: np.ndarray
    parity_map: np.ndarray  # rank x k, pivot bits = parity_map @ message

    @property
    def n(self) -> int:
        return self.h.n

    @property
    def k(self) -> int:
        return self.h.n - self.rank

    @property
    def rate(self) -> float:
        return self.k / self.n

    def encode(self, message) -> np.ndarray:
        msg = np.asarray(message, dtype=np.uint8)
        if msg.shape[-1] != self.k:
            raise ValueError(f"message length {msg.shape[-1]} != k={self.k}")
        c = np.zeros(msg.shape[:-1] + (self.n,), dtype=np.uint8)
        c[..., self.info_positions] = msg
        c[..., self.pivots] = (msg.astype(np.int64) @ self.parity_map.T.astype(np.int64)) & 1
        return c

    def syndrome(self, c) -> np.ndarray:
        return (self.h.sparse() @ np.asarray(c, dtype=np.int64).T).T & 1


def build_code(h: ParityCheckMatrix) -> LdpcCode:
    """GF(2) elimination of H; rank-deficient matrices just give a larger k."""
    R, piv = gf2.rref(h.dense())
    pivots = np.asarray(piv, dtype=np.int64)
    info = np.setdiff1d(np.arange(h.n), pivots)
    return LdpcCode(h, len(piv), pivots, info, R[:, info].astype(np.uint8))


def erasure_decode(code: LdpcCode, y, max_iters: int | None = None):
    """Peeling decoder: repeatedly solve checks with exactly one erased neighbour.

    Returns the completed codeword, or ``None`` when a stopping set remains.
    """
    h = code.h if isinstance(code, LdpcCode) else code
    y = np.array(y, dtype=np.int8)
    if y.shape != (h.n,):
        raise ValueError(f"received word must have length {h.n}")
    erased = y == ERASED
    left = int(erased.sum())
    if left == 0:
        return y.astype(np.uint8)
    count = np.zeros(h.m, dtype=np.int64)
    parity = np.zeros(h.m, dtype=np.int8)
    for i, row in enumerate(h.row_adj):
        for j in row:
            if erased[j]:
                count[i] += 1
            else:
                parity[i] ^= y[j]
    ready = deque(i for i in range(h.m) if count[i] == 1)
    steps = max_iters if max_iters is not None else h.n
    while ready and left and steps > 0:
        c = ready.popleft()
        if count[c] != 1:
            continue
        v = next(j for j in h.row_adj[c] if erased[j])
        y[v] = parity[c]
        erased[v] = False
        left -= 1
        steps -= 1
        for c2 in h.col_adj[v]:
            count[c2] -= 1
            parity[c2] ^= y[v]
            if count[c2] == 1:
                ready.append(c2)
    if left:
        return None
    return y.astype(np.uint8)


@njit(cache=True, nogil=True)
def _peel_rows(row_ptr, row_idx, col_ptr, col_idx, E, max_steps):
    m = row_ptr.size - 1
    count = np.empty(m, dtype=np.int64)
    ready = np.empty(m + col_idx.size, dtype=np.int64)
    for t in range(E.shape[0]):
        e = E[t]
        top = 0
        for c in range(m):
            k = 0
            for q in range(row_ptr[c], row_ptr[c + 1]):
                if e[row_idx[q]]:
                    k += 1
            count[c] = k
            if k == 1:
                ready[top] = c
                top += 1
        steps = max_steps
        while top > 0 and steps > 0:
            top -= 1
            c = ready[top]
            if count[c] != 1:
                continue
            v = -1
            for q in range(row_ptr[c], row_ptr[c + 1]):
                if e[row_idx[q]]:
                    v = row_idx[q]
                    break
            e[v] = False
            steps -= 1
            for q in range(col_ptr[v], col_ptr[v + 1]):
                c2 = col_idx[q]
                count[c2] -= 1
                if count[c2] == 1:
                    ready[top] = c2
                    top += 1


def peel_patterns(h: ParityCheckMatrix, erased: np.ndarray, max_iters: int | None = None,
                  H: sp.csr_matrix | None = None) -> np.ndarray:
    """Residual erasures after peeling, for many patterns at once (one per row).

    Without a step limit the residual set is the largest stopping set inside
    the pattern, whatever order checks are solved in; ``max_iters`` caps the
    number of recovered symbols as in :func:`erasure_decode`.
    """
    H = h.sparse() if H is None else H
    Ht = H.T.tocsr()
    E = np.array(erased, dtype=np.bool_, ndmin=2, order="C")
    if E.shape[1] != h.n:
        raise ValueError(f"patterns must have {h.n} columns")
    steps = max_iters if max_iters is not None else h.n
    _peel_rows(H.indptr.astype(np.int64), H.indices.astype(np.int64), Ht.indptr.astype(np.int64),
               Ht.indices.astype(np.int64), E, steps)
    return E


def bler(params: QueueParams, model: ErasureModel, code: LdpcCode | ParityCheckMatrix, trials: int,
         seed: int, max_iters: int | None = None, slow: bool = False, batch: int = 1024,
         workers: int = 1, return_trials: bool = False):
    """Block error rate of peeling decoding over the EQC.

    Decodability on an erasure channel depends only on the pattern, which the
    fast path exploits; ``slow=True`` encodes random codewords and decodes them.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    h = code.h if isinstance(code, LdpcCode) else code
    if slow and not isinstance(code, LdpcCode):
        raise ValueError("the slow path needs an LdpcCode with an encoder")
    H = h.sparse()

    def run(lo, hi):
        pats = eqc_patterns(params, model, h.n, hi - lo, seed, first_trial=lo)
        if not slow:
            return peel_patterns(h, pats, max_iters, H).any(axis=1)
        out = np.empty(hi - lo, dtype=bool)
        for t in range(hi - lo):
            msg = _rng.stream_rng(seed, lo + t, _rng.MESSAGES).integers(0, 2, code.k, dtype=np.uint8)
            c = code.encode(msg)
            dec = erasure_decode(code, apply_erasures(c, pats[t]), max_iters)
            out[t] = dec is None or not np.array_equal(dec, c)
        return out

    fails = np.concatenate(_rng.map_batches(run, _rng.batch_ranges(trials, batch), workers))
    errors = int(fails.sum())
    est = Estimate(errors / trials, _rng.binomial_se(errors, trials), errors, trials)
    return (est, fails) if return_trials else est
