"""Dense GF(2) elimination on bit-packed rows."""

from __future__ import annotations

import numpy as np


def rref(H) -> tuple[np.ndarray, list[int]]:
    """Reduced row echelon form of a 0/1 matrix.

    Returns ``(R, pivots)`` where ``R`` has ``len(pivots)`` non-zero rows
    (unpacked, uint8) and ``pivots[r]`` is the pivot column of row ``r``.
    """
    H = np.asarray(H, dtype=np.uint8) & 1
    m, n = H.shape
    M = np.packbits(H, axis=1)
    pivots: list[int] = []
    r = 0
    for col in range(n):
        if r == m:
            break
        byte, shift = col >> 3, 7 - (col & 7)
        bits = (M[:, byte] >> shift) & 1
        nz = np.flatnonzero(bits[r:])
        if nz.size == 0:
            continue
        p = r + int(nz[0])
        if p != r:
            M[[r, p]] = M[[p, r]]
            bits[[r, p]] = bits[[p, r]]
        bits[r] = 0
        rows = np.flatnonzero(bits)
        if rows.size:
            M[rows] ^= M[r]
        pivots.append(col)
        r += 1
    return np.unpackbits(M[:r], axis=1, count=n), pivots


def rank(H) -> int:
    return len(rref(H)[1])


def solve_erasures(H, y_known: np.ndarray, erased: np.ndarray):
    """Maximum-likelihood erasure filling: solve ``H_E x_E = H_K y_K`` over GF(2).

    Returns the filled word, or ``None`` when the erased positions are not
    uniquely determined.
    """
    H = np.asarray(H, dtype=np.uint8)
    erased = np.asarray(erased, dtype=bool)
    E = np.flatnonzero(erased)
    y = np.where(erased, 0, y_known).astype(np.uint8)
    if E.size == 0:
        return y
    syndrome = (H[:, ~erased].astype(np.int64) @ y[~erased]) & 1
    aug = np.concatenate([H[:, E], syndrome[:, None].astype(np.uint8)], axis=1)
    R, piv = rref(aug)
    if piv[: E.size] != list(range(E.size)):
        return None
    y[E] = R[: E.size, -1]
    return y
