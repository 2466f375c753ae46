"""Problem data for convex quadratic minimisation with indicator variables.

An :class:`Instance` encodes

    min_{x, z}  1/2 x'Qx + c'x + sum_{i: indicator[i]} lam[i] z[i] + offset
    s.t.        x[i] (1 - z[i]) = 0   for indicator variables,

with ``Q`` symmetric positive definite.  Variables without an indicator are
always free (their ``z`` is pinned to one and carries no penalty).

Node indices are 0-based everywhere.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from .errors import (
    AsymmetricInput,
    ComplementarityViolation,
    DimensionMismatch,
    InputError,
    NotPositiveDefinite,
)

# Matrices with at most this bandwidth get exact extreme eigenvalues through
# LAPACK's banded solver, whatever their size.
BANDED_EIG_MAX_BANDWIDTH = 64
DENSE_LIMIT = 4096


class SparseSymMatrix:
    """Symmetric matrix stored by its sparsity pattern.

    Internally a full (both triangles) CSR matrix with explicit zeros removed,
    so the stored off-diagonal pattern is exactly the support graph.
    """

    __slots__ = ("_csr",)

    def __init__(self, csr: sp.spmatrix):
        csr = sp.csr_matrix(csr, dtype=float)
        if csr.shape[0] != csr.shape[1]:
            raise DimensionMismatch(f"matrix is not square: {csr.shape}")
        asym = abs(csr - csr.T)
        if asym.nnz:
            scale = float(abs(csr).max()) if csr.nnz else 0.0
            if float(asym.max()) > 1e-12 * scale:
                raise AsymmetricInput("matrix is not symmetric")
            # round-off asymmetry from products like D Q D
            csr = ((csr + csr.T) * 0.5).tocsr()
        csr.eliminate_zeros()
        csr.sort_indices()
        diag = csr.diagonal()
        if np.any(diag <= 0):
            i = int(np.flatnonzero(diag <= 0)[0])
            raise NotPositiveDefinite(f"nonpositive diagonal entry Q[{i},{i}]={diag[i]}")
        self._csr = csr

    @classmethod
    def from_entries(cls, n: int, entries: Iterable[tuple[int, int, float]]) -> "SparseSymMatrix":
        """Build from ``(i, j, value)`` triples, each unordered pair given once."""
        seen: dict[tuple[int, int], float] = {}
        for i, j, v in entries:
            i, j = int(i), int(j)
            if not (0 <= i < n and 0 <= j < n):
                raise DimensionMismatch(f"entry ({i}, {j}) outside a {n}x{n} matrix")
            key = (i, j) if i <= j else (j, i)
            if key in seen and seen[key] != float(v):
                raise AsymmetricInput(f"conflicting values for pair {key}")
            seen[key] = float(v)
        rows, cols, vals = [], [], []
        for (i, j), v in seen.items():
            rows.append(i)
            cols.append(j)
            vals.append(v)
            if i != j:
                rows.append(j)
                cols.append(i)
                vals.append(v)
        return cls(sp.csr_matrix((vals, (rows, cols)), shape=(n, n)))

    @classmethod
    def from_dense(cls, Q) -> "SparseSymMatrix":
        Q = np.asarray(Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise DimensionMismatch(f"matrix is not square: {Q.shape}")
        return cls(sp.csr_matrix(Q))

    @property
    def n(self) -> int:
        return self._csr.shape[0]

    @property
    def csr(self) -> sp.csr_matrix:
        return self._csr

    def __repr__(self) -> str:
        return f"SparseSymMatrix(n={self.n}, nnz={self._csr.nnz})"

    def diagonal(self) -> np.ndarray:
        return self._csr.diagonal()

    def toarray(self) -> np.ndarray:
        return self._csr.toarray()

    def submatrix(self, rows, cols=None) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.intp)
        cols = rows if cols is None else np.asarray(cols, dtype=np.intp)
        if rows.size == 0 or cols.size == 0:
            return np.zeros((rows.size, cols.size))
        return self._csr[rows][:, cols].toarray()

    def matvec(self, x) -> np.ndarray:
        return self._csr @ np.asarray(x, dtype=float)

    def upper_entries(self) -> list[tuple[int, int, float]]:
        coo = sp.triu(self._csr).tocoo()
        order = np.lexsort((coo.col, coo.row))
        return [(int(coo.row[k]), int(coo.col[k]), float(coo.data[k])) for k in order]

    def bandwidth(self) -> int:
        coo = self._csr.tocoo()
        if coo.nnz == 0:
            return 0
        return int(np.max(np.abs(coo.row - coo.col)))

    def permute(self, order) -> "SparseSymMatrix":
        """Matrix with rows/cols reordered so new index k is old index order[k]."""
        order = np.asarray(order, dtype=np.intp)
        return SparseSymMatrix(self._csr[order][:, order])

    def scale(self, s) -> "SparseSymMatrix":
        D = sp.diags(np.asarray(s, dtype=float))
        return SparseSymMatrix(D @ self._csr @ D)

    def is_symmetric(self, atol: float = 0.0) -> bool:
        diff = self._csr - self._csr.T
        return diff.nnz == 0 or float(np.max(np.abs(diff.data))) <= atol


def _as_vector(v, n: int, name: str, dtype=float) -> np.ndarray:
    arr = np.array(v, dtype=dtype).reshape(-1)
    if arr.shape != (n,):
        raise DimensionMismatch(f"{name} has length {arr.size}, expected {n}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Instance:
    Q: SparseSymMatrix
    c: np.ndarray
    lam: np.ndarray
    indicator: np.ndarray | None = None
    offset: float = 0.0

    def __post_init__(self):
        n = self.Q.n
        set_ = object.__setattr__
        set_(self, "c", _as_vector(self.c, n, "c"))
        lam = np.broadcast_to(np.asarray(self.lam, dtype=float), (n,)) if np.ndim(self.lam) == 0 else self.lam
        set_(self, "lam", _as_vector(lam, n, "lambda"))
        ind = np.ones(n, dtype=bool) if self.indicator is None else self.indicator
        set_(self, "indicator", _as_vector(ind, n, "indicator", dtype=bool))
        set_(self, "offset", float(self.offset))

    @property
    def n(self) -> int:
        return self.Q.n

    def replace(self, **changes) -> "Instance":
        fields = dict(Q=self.Q, c=self.c, lam=self.lam, indicator=self.indicator, offset=self.offset)
        fields.update(changes)
        return Instance(**fields)

    def permute(self, order) -> "Instance":
        order = np.asarray(order, dtype=np.intp)
        return Instance(
            self.Q.permute(order), self.c[order], self.lam[order], self.indicator[order], self.offset
        )


@dataclass
class Solution:
    x: np.ndarray
    z: np.ndarray
    objective: float
    stats: Any = None

    def to_dict(self) -> dict:
        stats = self.stats.to_dict() if hasattr(self.stats, "to_dict") else self.stats
        return {
            "objective": float(self.objective),
            "x": [float(v) for v in self.x],
            "z": [bool(v) for v in self.z],
            "stats": stats or {},
        }


def evaluate_objective(inst: Instance, x, z) -> float:
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=bool)
    if x.shape != (inst.n,) or z.shape != (inst.n,):
        raise DimensionMismatch(f"expected vectors of length {inst.n}, got {x.shape} and {z.shape}")
    bad = inst.indicator & ~z & (x != 0)
    if np.any(bad):
        raise ComplementarityViolation(f"x[{int(np.flatnonzero(bad)[0])}] != 0 while z = 0")
    quad = 0.5 * float(x @ inst.Q.matvec(x))
    penalty = float(np.sum(inst.lam[inst.indicator & z]))
    return quad + float(inst.c @ x) + penalty + inst.offset


def normalize_diagonal(inst: Instance) -> tuple[Instance, np.ndarray]:
    """Rescale variables so Q has unit diagonal.

    Returns the scaled instance and ``scale = sqrt(diag(Q))``; a solution of
    the scaled problem maps back through ``x = x_scaled / scale``.
    """
    diag = inst.Q.diagonal()
    if np.any(diag <= 0):
        raise NotPositiveDefinite("nonpositive diagonal entry")
    scale = np.sqrt(diag)
    inv = 1.0 / scale
    return inst.replace(Q=inst.Q.scale(inv), c=inst.c * inv), scale


def fix_nonpositive_lambda(inst: Instance) -> Instance:
    """Turn indicator variables with lam <= 0 into always-free variables."""
    flip = inst.indicator & (inst.lam <= 0)
    if not np.any(flip):
        return inst
    indicator = inst.indicator.copy()
    indicator[flip] = False
    return inst.replace(indicator=indicator, offset=inst.offset + float(np.sum(inst.lam[flip])))


def support_graph(Q: SparseSymMatrix) -> list[set[int]]:
    csr = Q.csr
    adj: list[set[int]] = []
    for i in range(Q.n):
        row = csr.indices[csr.indptr[i] : csr.indptr[i + 1]]
        adj.append({int(j) for j in row if j != i})
    return adj


def graph_edges(adj: list[set[int]]) -> list[tuple[int, int]]:
    return [(i, j) for i, nb in enumerate(adj) for j in sorted(nb) if i < j]


@dataclass
class Diagnostics:
    mu_min: float
    mu_max: float
    kappa2: float
    kappa_inf: float
    method: str
    warnings: list[str] = field(default_factory=list)


def extreme_eigenvalues(Q: SparseSymMatrix) -> tuple[float, float, str]:
    """Return (mu_min, mu_max, method).

    Banded matrices use the exact banded LAPACK solver; other matrices up to
    DENSE_LIMIT use a dense solve.  Beyond that, Gershgorin bounds are returned
    when they certify positive definiteness, with Lanczos as the fallback.
    """
    n = Q.n
    bw = Q.bandwidth()
    if bw <= BANDED_EIG_MAX_BANDWIDTH and n > 2 * bw + 1:
        coo = sp.tril(Q.csr).tocoo()
        band = np.zeros((bw + 1, n))
        band[coo.row - coo.col, coo.col] = coo.data
        lo = scipy.linalg.eigvals_banded(band, lower=True, select="i", select_range=(0, 0))
        hi = scipy.linalg.eigvals_banded(band, lower=True, select="i", select_range=(n - 1, n - 1))
        return float(lo[0]), float(hi[0]), "banded"
    if n <= DENSE_LIMIT:
        ev = np.linalg.eigvalsh(Q.toarray())
        return float(ev[0]), float(ev[-1]), "dense"
    absrow = np.asarray(abs(Q.csr).sum(axis=1)).ravel()
    diag = Q.diagonal()
    radius = absrow - np.abs(diag)
    lo, hi = float(np.min(diag - radius)), float(np.max(diag + radius))
    if lo > 0:
        return lo, hi, "gershgorin"
    lo = scipy.sparse.linalg.eigsh(Q.csr, k=1, which="SA", return_eigenvectors=False)[0]
    hi = scipy.sparse.linalg.eigsh(Q.csr, k=1, which="LA", return_eigenvectors=False)[0]
    return float(lo), float(hi), "lanczos"


def validate(inst: Instance) -> Diagnostics:
    Q = inst.Q
    if not Q.is_symmetric():
        raise AsymmetricInput("Q is not symmetric")
    mu_min, mu_max, method = extreme_eigenvalues(Q)
    if not mu_min > 0:
        raise NotPositiveDefinite(f"smallest eigenvalue {mu_min:.3e} is not positive")
    kappa_inf = math.nan
    if Q.n <= DENSE_LIMIT:
        dense = Q.toarray()
        inv = np.linalg.inv(dense)
        kappa_inf = float(np.abs(inv).sum(axis=1).max() * np.abs(dense).sum(axis=1).max())
    diag = Diagnostics(mu_min, mu_max, mu_max / mu_min, kappa_inf, method)
    if np.any(inst.indicator & (inst.lam <= 0)):
        diag.warnings.append("indicator variables with nonpositive lambda are always free")
    return diag


# JSON instance files -------------------------------------------------------


def instance_to_dict(inst: Instance) -> dict:
    return {
        "n": inst.n,
        "q": [[i, j, v] for i, j, v in inst.Q.upper_entries()],
        "c": inst.c.tolist(),
        "lambda": inst.lam.tolist(),
        "indicator": inst.indicator.tolist(),
        "offset": inst.offset,
    }


def instance_from_dict(data: dict) -> Instance:
    try:
        n = int(data["n"])
        Q = SparseSymMatrix.from_entries(n, data["q"])
        return Instance(
            Q,
            data["c"],
            data["lambda"],
            data.get("indicator"),
            float(data.get("offset", 0.0)),
        )
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed instance: {exc!r}") from exc


def load_instance(path) -> Instance:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc
    return instance_from_dict(data)


def save_instance(inst: Instance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(inst)))
