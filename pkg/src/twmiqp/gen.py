"""Random instance families: banded Hessians and a low-treewidth variant."""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

from .errors import InputError
from .instance import Instance, SparseSymMatrix, extreme_eigenvalues
from .treedec import TreeDecomposition, balance, path_decomposition_banded


def _banded_factor(rng: np.random.Generator, n: int, w: int) -> sp.csr_matrix:
    """Upper-triangular Y with U(-1, 1) entries on diagonals 0..w."""
    diags = [rng.uniform(-1.0, 1.0, n - k) for k in range(w + 1)]
    return sp.diags(diags, list(range(w + 1)), shape=(n, n), format="csr")


def _vectors(rng: np.random.Generator, n: int, lam_range):
    c = rng.uniform(-10.0, 10.0, n)
    lam = rng.uniform(lam_range[0], lam_range[1], n)
    return c, lam


def gen_banded(n: int, w: int, nu: float, seed: int, lam_range=(3.5, 4.5)) -> Instance:
    """Q = Y'Y + nu I with Y upper triangular of bandwidth w."""
    if not (n > w >= 1) or not nu > 0:
        raise InputError(f"need n > w >= 1 and nu > 0 (got n={n}, w={w}, nu={nu})")
    rng = np.random.default_rng(seed)
    Y = _banded_factor(rng, n, w)
    Q = (Y.T @ Y + nu * sp.eye(n)).tocsr()
    c, lam = _vectors(rng, n, lam_range)
    return Instance(SparseSymMatrix(Q), c, lam)


def kappa2(inst: Instance) -> float:
    lo, hi, _ = extreme_eigenvalues(inst.Q)
    return hi / lo


def tune_nu(n: int, w: int, target_kappa: float, seed: int, rel_tol: float = 0.1,
            max_iter: int = 60, **kw) -> tuple[float, Instance]:
    """Bisect log(nu) until the generated instance's condition number is
    within ``rel_tol`` of the target.  The same seed is used throughout so
    only the shift changes."""
    if target_kappa <= 1:
        raise InputError("target condition number must exceed 1")
    lo, hi = -8.0, 8.0
    best = None
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        inst = gen_banded(n, w, math.exp(mid), seed, **kw)
        k = kappa2(inst)
        best = (math.exp(mid), inst)
        if abs(k - target_kappa) <= rel_tol * target_kappa:
            return best
        # larger nu means better conditioning
        if k > target_kappa:
            lo = mid
        else:
            hi = mid
    return best


def _low_treewidth_pattern(n: int, w: int, omega: int):
    """Block pattern of bandwidth <= w and treewidth <= omega.

    Nodes come in blocks of w.  The first omega nodes of each block form a
    clique ("spine"); the remaining nodes of the block are leaves attached to
    the whole spine.  Spine node i is linked to spine node i of the next block,
    which sits exactly w positions later.
    """
    edges = set()
    bags: list[frozenset] = []
    child: list[int] = []
    blocks = [list(range(s, min(s + w, n))) for s in range(0, n, w)]
    prev_top = None
    for bi, blk in enumerate(blocks):
        spine, leaves = blk[:omega], blk[omega:]
        for a in range(len(spine)):
            for b in range(a + 1, len(spine)):
                edges.add((spine[a], spine[b]))
            for leaf in leaves:
                edges.add((spine[a], leaf))
        nxt = blocks[bi + 1][:omega] if bi + 1 < len(blocks) else []
        for i, s in enumerate(spine):
            if i < len(nxt):
                edges.add((s, nxt[i]))
        # transition bags {s_j..s_omega} u {s'_1..s'_j} lead to the next spine;
        # leaf bags hang off the first of them (or off the spine bag at the end)
        if nxt:
            chain = [frozenset(spine[j - 1 :]) | frozenset(nxt[:j]) for j in range(1, len(nxt) + 1)]
        else:
            chain = [frozenset(spine)]
        first = len(bags)
        for k, cb in enumerate(chain):
            bags.append(cb)
            child.append(-1)
            if k:
                child[first + k - 1] = first + k
        if prev_top is not None:
            child[prev_top] = first
        for leaf in leaves:
            bags.append(frozenset(spine) | {leaf})
            child.append(first)
        prev_top = first + len(chain) - 1
    T = TreeDecomposition(tuple(bags), tuple(child))
    return edges, T


def gen_low_treewidth(n: int, w: int, target_omega: int, nu: float, seed: int,
                      lam_range=(3.5, 4.5)) -> tuple[Instance, TreeDecomposition]:
    """Banded-style instance whose support has a decomposition of width
    ``target_omega``; returns the instance and that (balanced) decomposition."""
    if not (1 <= target_omega <= w < n):
        raise InputError(f"need 1 <= target_omega <= w < n (got {target_omega}, {w}, {n})")
    if target_omega == w:
        return gen_banded(n, w, nu, seed, lam_range), path_decomposition_banded(n, w)
    rng = np.random.default_rng(seed)
    Y = _banded_factor(rng, n, w)
    G = (Y.T @ Y).tocoo()
    edges, T = _low_treewidth_pattern(n, w, target_omega)
    allowed = {(a, b) for a, b in edges} | {(b, a) for a, b in edges}
    keep = np.array(
        [r == q or (int(r), int(q)) in allowed for r, q in zip(G.row, G.col)], dtype=bool
    )
    M = sp.csr_matrix((G.data[keep], (G.row[keep], G.col[keep])), shape=(n, n))
    # zeroing entries can destroy definiteness; shift so the smallest
    # eigenvalue is at least nu
    lo, _, _ = extreme_eigenvalues(SparseSymMatrix(M))
    Q = SparseSymMatrix((M + (nu + max(0.0, -lo)) * sp.eye(n)).tocsr())
    c, lam = _vectors(rng, n, lam_range)
    return Instance(Q, c, lam), balance(T)
