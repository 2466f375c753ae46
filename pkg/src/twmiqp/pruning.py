"""Discarding pieces that never attain the minimum on the box |a|_inf <= U.

Two pieces can only cross at points whose infinity norm is at least the bound
returned by :func:`root_lower_bound`.  When that bound exceeds U, the piece
with the larger constant term is above the other everywhere on the box.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .pwq import PiecewiseQuad, QuadPiece


@njit(cache=True)
def _bound(A, b, d, i, j):
    """Returns (L, is_duplicate) for pieces i and j of flattened stacks."""
    abar = 0.0
    for t in range(A.shape[1]):
        abar += abs(A[i, t] - A[j, t])
    abar *= 0.5
    bbar = 0.0
    for t in range(b.shape[1]):
        bbar += abs(b[i, t] - b[j, t])
    dbar = abs(d[i] - d[j])
    if dbar == 0.0:
        return 0.0, abar == 0.0 and bbar == 0.0
    if abar == 0.0 and bbar == 0.0:
        return np.inf, False
    # cancellation-free form of the positive root of abar t^2 + bbar t - dbar
    return 2.0 * dbar / (bbar + math.sqrt(bbar * bbar + 4.0 * abar * dbar)), False


@njit(cache=True)
def _prune_exact(A, b, d, U):
    N = d.shape[0]
    alive = np.ones(N, dtype=np.bool_)
    kept = np.empty(N, dtype=np.int64)
    nk = 0
    start = 0
    while True:
        while start < N and not alive[start]:
            start += 1
        if start >= N:
            break
        i = start
        alive[i] = False
        kept[nk] = i
        nk += 1
        for j in range(i + 1, N):
            if not alive[j]:
                continue
            L, dup = _bound(A, b, d, i, j)
            if dup:
                alive[j] = False
            elif L > U:
                if d[i] < d[j]:
                    alive[j] = False
                else:
                    nk -= 1
                    break
    return kept[:nk].copy()


@njit(cache=True)
def _prune_path(A, b, d, U):
    N = d.shape[0]
    kept = np.empty(N, dtype=np.int64)
    if N == 0:
        return kept
    kept[0] = 0
    nk = 1
    j = 0
    for i in range(1, N):
        L, dup = _bound(A, b, d, i, j)
        if dup:
            continue
        if L > U:
            if d[i] < d[j]:
                kept[nk - 1] = i
                j = i
        else:
            kept[nk] = i
            nk += 1
            j = i
    return kept[:nk].copy()


def _flat(f: PiecewiseQuad):
    N = len(f)
    return (
        np.ascontiguousarray(f.A.reshape(N, -1)),
        np.ascontiguousarray(f.b.reshape(N, -1)),
        np.ascontiguousarray(f.d),
    )


def root_lower_bound(p1: QuadPiece, p2: QuadPiece) -> float:
    if p1.coords != p2.coords:
        raise ValueError("pieces must share coordinates")
    f = PiecewiseQuad.from_pieces([p1, p2])
    A, b, d = _flat(f)
    return float(_bound(A, b, d, 0, 1)[0])


def prune_exact_indices(f: PiecewiseQuad, U: float) -> np.ndarray:
    if len(f) <= 1:
        return np.arange(len(f))
    return _prune_exact(*_flat(f), float(U))


def prune_path_indices(f: PiecewiseQuad, U: float) -> np.ndarray:
    if len(f) <= 1:
        return np.arange(len(f))
    return _prune_path(*_flat(f), float(U))


def prune_exact(f: PiecewiseQuad, U: float) -> PiecewiseQuad:
    """Pairwise pruning; survivors keep their relative order."""
    return f.take(prune_exact_indices(f, U))


def prune_path_heuristic(f: PiecewiseQuad, U: float) -> PiecewiseQuad:
    """Single pass comparing each piece with the last one kept."""
    return f.take(prune_path_indices(f, U))
