"""Quadratic pieces and piecewise-quadratic value functions.

A piece over coordinates ``coords`` is ``1/2 a'Aa + b'a + d``.  A
:class:`PiecewiseQuad` is the pointwise minimum of pieces sharing the same
coordinates, stored as stacked arrays so the DP steps vectorise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InputError, InvalidDecomposition, NotPositiveDefinite


@dataclass(frozen=True)
class QuadPiece:
    coords: tuple[int, ...]
    A: np.ndarray
    b: np.ndarray
    d: float

    def __call__(self, alpha) -> float:
        alpha = np.asarray(alpha, dtype=float)
        return float(0.5 * alpha @ self.A @ alpha + self.b @ alpha + self.d)


class PiecewiseQuad:
    __slots__ = ("coords", "A", "b", "d")

    def __init__(self, coords, A, b, d):
        self.coords = tuple(int(c) for c in coords)
        k = len(self.coords)
        self.d = np.asarray(d, dtype=float).reshape(-1)
        N = self.d.size
        self.A = np.asarray(A, dtype=float).reshape(N, k, k)
        self.b = np.asarray(b, dtype=float).reshape(N, k)

    @classmethod
    def from_pieces(cls, pieces: list[QuadPiece]) -> "PiecewiseQuad":
        if not pieces:
            raise InputError("a piecewise function needs at least one piece")
        coords = pieces[0].coords
        if any(p.coords != coords for p in pieces):
            raise InputError("pieces must share coordinates")
        return cls(
            coords,
            np.stack([p.A for p in pieces]),
            np.stack([p.b for p in pieces]),
            [p.d for p in pieces],
        )

    @classmethod
    def single(cls, p: QuadPiece) -> "PiecewiseQuad":
        return cls(p.coords, p.A[None], p.b[None], [p.d])

    def __len__(self) -> int:
        return self.d.size

    def __repr__(self) -> str:
        return f"PiecewiseQuad(coords={self.coords}, pieces={len(self)})"

    def piece(self, i: int) -> QuadPiece:
        return QuadPiece(self.coords, self.A[i].copy(), self.b[i].copy(), float(self.d[i]))

    def pieces(self) -> list[QuadPiece]:
        return [self.piece(i) for i in range(len(self))]

    def take(self, idx) -> "PiecewiseQuad":
        idx = np.asarray(idx, dtype=np.intp)
        return PiecewiseQuad(self.coords, self.A[idx], self.b[idx], self.d[idx])

    def values(self, alpha) -> np.ndarray:
        """Value of every piece at one point."""
        alpha = np.asarray(alpha, dtype=float)
        if alpha.shape != (len(self.coords),):
            raise InputError(f"point has shape {alpha.shape}, expected ({len(self.coords)},)")
        Aa = self.A @ alpha
        return 0.5 * Aa @ alpha + self.b @ alpha + self.d

    def values_many(self, points) -> np.ndarray:
        """Piece values at many points, shape (points, pieces)."""
        P = np.asarray(points, dtype=float).reshape(-1, len(self.coords))
        quad = np.einsum("mi,nij,mj->mn", P, self.A, P)
        return 0.5 * quad + P @ self.b.T + self.d[None, :]

    def min_many(self, points) -> np.ndarray:
        return self.values_many(points).min(axis=1)

    def eval(self, alpha) -> tuple[float, int]:
        """Minimum over pieces and the first piece attaining it."""
        if len(self) == 0:
            raise InputError("cannot evaluate a function with no pieces")
        vals = self.values(alpha)
        i = int(np.argmin(vals))
        return float(vals[i]), i

    def to_dict(self) -> dict:
        return {
            "coords": list(self.coords),
            "pieces": [
                {"A": self.A[i].tolist(), "b": self.b[i].tolist(), "d": float(self.d[i])}
                for i in range(len(self))
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PiecewiseQuad":
        coords = data["coords"]
        k = len(coords)
        ps = data["pieces"]
        return cls(
            coords,
            np.array([p["A"] for p in ps], dtype=float).reshape(len(ps), k, k),
            np.array([p["b"] for p in ps], dtype=float).reshape(len(ps), k),
            [p["d"] for p in ps],
        )


def h_phi(Q, c, nodes) -> QuadPiece:
    """The plain quadratic 1/2 a'Q_SS a + c_S'a over the node set S."""
    nodes = tuple(int(v) for v in nodes)
    idx = np.array(nodes, dtype=np.intp)
    if hasattr(Q, "submatrix"):
        A = Q.submatrix(idx)
    else:
        A = np.asarray(Q, dtype=float)[np.ix_(idx, idx)]
    return QuadPiece(nodes, A, np.asarray(c, dtype=float)[idx].copy(), 0.0)


def eliminate_with_indicator(
    f: PiecewiseQuad, u: int, lam_u: float, has_indicator: bool
) -> PiecewiseQuad:
    """Minimise out coordinate ``u`` together with its indicator.

    With an indicator each piece yields a branch with ``x_u = 0`` and a branch
    with ``x_u`` free at cost ``lam_u``.  All zero-branch pieces come first,
    followed by all free-branch pieces, each block in input order.
    """
    try:
        k = f.coords.index(u)
    except ValueError:
        raise InputError(f"coordinate {u} not in {f.coords}") from None
    keep = [i for i in range(len(f.coords)) if i != k]
    coords = tuple(f.coords[i] for i in keep)

    a = f.A[:, k, k]
    if np.any(a <= 0):
        raise NotPositiveDefinite(f"nonpositive pivot while eliminating coordinate {u}")
    v = f.A[:, keep, k]
    bk = f.b[:, k]
    A0 = f.A[:, keep][:, :, keep]
    b0 = f.b[:, keep]
    A1 = A0 - v[:, :, None] * (v / a[:, None])[:, None, :]
    b1 = b0 - (bk / a)[:, None] * v
    d1 = f.d - 0.5 * bk * bk / a
    if not has_indicator:
        return PiecewiseQuad(coords, A1, b1, d1)
    d1 = d1 + lam_u
    return PiecewiseQuad(
        coords,
        np.concatenate([A0, A1]),
        np.concatenate([b0, b1]),
        np.concatenate([f.d, d1]),
    )


def embed(f: PiecewiseQuad, bag: tuple[int, ...], minus: QuadPiece | None = None):
    """Stacked (A, b, d) of ``f - minus`` lifted to the coordinates of ``bag``."""
    where = {v: i for i, v in enumerate(bag)}
    try:
        pos = np.array([where[v] for v in f.coords], dtype=np.intp)
    except KeyError as exc:
        raise InvalidDecomposition(f"coordinate {exc.args[0]} is not in bag {bag}") from None
    A, b, d = f.A, f.b, f.d
    if minus is not None:
        if minus.coords != f.coords:
            raise InputError("subtracted piece must share coordinates")
        A = A - minus.A
        b = b - minus.b
        d = d - minus.d
    k = len(bag)
    N = len(f)
    Ae = np.zeros((N, k, k))
    be = np.zeros((N, k))
    if pos.size:
        Ae[:, pos[:, None], pos[None, :]] = A
        be[:, pos] = b
    return Ae, be, np.array(d, dtype=float)


def combine(h: QuadPiece, parents, bag) -> PiecewiseQuad:
    """h + sum over parents of (g_v - phi_v), as the cross product of pieces.

    Combinations follow ``itertools.product`` order over the parent list.
    """
    bag = tuple(int(v) for v in bag)
    if h.coords != bag:
        raise InputError("h must be defined over the bag")
    A = h.A[None]
    b = h.b[None]
    d = np.array([h.d])
    for g, phi in parents:
        Ae, be, de = embed(g, bag, phi)
        A = (A[:, None] + Ae[None]).reshape(-1, len(bag), len(bag))
        b = (b[:, None] + be[None]).reshape(-1, len(bag))
        d = (d[:, None] + de[None]).reshape(-1)
    return PiecewiseQuad(bag, A, b, d)


def build_piece_direct(Q, c, lam, bag, J_s) -> QuadPiece:
    """Piece for a fixed support pattern by direct Schur complements.

    ``J_s`` lists the eliminated variables that are free (nonzero); the
    remaining eliminated variables are fixed at zero and drop out.
    """
    Qd = Q.toarray() if hasattr(Q, "toarray") else np.asarray(Q, dtype=float)
    c = np.asarray(c, dtype=float)
    lam = np.asarray(lam, dtype=float)
    B = np.array(list(bag), dtype=np.intp)
    J = np.array(list(J_s), dtype=np.intp)
    QBB = Qd[np.ix_(B, B)]
    if J.size == 0:
        return QuadPiece(tuple(int(v) for v in B), QBB, c[B].copy(), 0.0)
    QBJ = Qd[np.ix_(B, J)]
    try:
        fac = scipy.linalg.cho_factor(Qd[np.ix_(J, J)])
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("eliminated block is not positive definite") from exc
    X = scipy.linalg.cho_solve(fac, np.column_stack([QBJ.T, c[J]]))
    A = QBB - QBJ @ X[:, :-1]
    b = c[B] - QBJ @ X[:, -1]
    d = -0.5 * float(c[J] @ X[:, -1]) + float(lam[J].sum())
    return QuadPiece(tuple(int(v) for v in B), 0.5 * (A + A.T), b, d)
