"""Exact solver: dynamic programming over a balanced tree decomposition.

Each labelled bag ``u`` carries a piecewise-quadratic cost ``f_u`` over its
coordinates.  Minimising out node ``u`` (with or without its indicator) gives
``g_u``; a bag's cost is its own quadratic plus the corrected ``g`` of its
parent bags.  Pieces that cannot attain the minimum on the box of radius U are
pruned after every combination step.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse.csgraph
import scipy.sparse.linalg

from .errors import InputError, InvalidDecomposition, NotPositiveDefinite, PieceLimitExceeded
from .instance import (
    Instance,
    SparseSymMatrix,
    Solution,
    evaluate_objective,
    extreme_eigenvalues,
    fix_nonpositive_lambda,
    normalize_diagonal,
    support_graph,
    validate,
)
from .pruning import prune_exact_indices, prune_path_indices
from .pwq import PiecewiseQuad, QuadPiece, combine, eliminate_with_indicator
from .treedec import (
    LabeledDecomposition,
    TreeDecomposition,
    balance,
    check_decomposition,
    decompose,
    label,
    neighborhood_sizes,
    path_decomposition_banded,
    relabel_graph,
)

PRUNE_MODES = ("exact", "path", "auto", "none")


@dataclass
class SolveOptions:
    # "auto" and "theory" use the a-priori bound; a number is a bound on
    # |x*|_inf in the instance's own units.
    U: float | str = "auto"
    prune: str = "auto"
    store_parametric_costs: bool = True
    tolerance: float = 1e-9
    max_pieces: int = 2_000_000
    structure: str = "banded"
    on_prune: Callable | None = None

    def __post_init__(self):
        if self.prune not in PRUNE_MODES:
            raise InputError(f"prune mode must be one of {PRUNE_MODES}")
        if not isinstance(self.U, str) and not self.U > 0:
            raise InputError("U must be positive")
        if isinstance(self.U, str) and self.U not in ("auto", "theory"):
            raise InputError("U must be 'auto', 'theory' or a positive number")
        if self.structure not in ("banded", "volume_growth"):
            raise InputError("structure must be 'banded' or 'volume_growth'")


@dataclass
class SolveStats:
    pieces_pre: list[int] = field(default_factory=list)
    pieces_post: list[int] = field(default_factory=list)
    U: float = math.nan
    width: int = -1
    prune: str = ""
    time_total: float = 0.0
    time_dp: float = 0.0
    dp_objective: float = math.nan
    mu_min: float = math.nan
    mu_max: float = math.nan

    @property
    def max_retained(self) -> int:
        return max(self.pieces_post, default=0)

    @property
    def mean_retained(self) -> float:
        return float(np.mean(self.pieces_post)) if self.pieces_post else 0.0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["max_retained"] = self.max_retained
        out["mean_retained"] = self.mean_retained
        return out


class _Rows:
    """Row dictionaries for fast extraction of small dense blocks."""

    def __init__(self, Q: SparseSymMatrix):
        csr = Q.csr
        self.rows = [
            dict(zip(csr.indices[csr.indptr[i] : csr.indptr[i + 1]].tolist(),
                     csr.data[csr.indptr[i] : csr.indptr[i + 1]].tolist()))
            for i in range(Q.n)
        ]

    def block(self, idx) -> np.ndarray:
        return np.array([[self.rows[i].get(j, 0.0) for j in idx] for i in idx], dtype=float).reshape(
            len(idx), len(idx)
        )


def _decay_constants(mu_min: float, mu_max: float) -> tuple[float, float]:
    kappa = mu_max / mu_min
    sk = math.sqrt(kappa)
    C1 = max(1.0, (1.0 + sk) ** 2 / (2.0 * kappa)) / mu_min
    rho = (sk - 1.0) / (sk + 1.0)
    return C1, rho


def fit_volume_growth(delta: np.ndarray) -> tuple[float, int]:
    """(delta, gamma) with Delta_m <= delta * m**gamma for the measured m >= 1.

    gamma comes from a least-squares fit of log Delta_m on log m, rounded up
    to an integer; delta is then the smallest constant making the bound hold.
    """
    m = np.arange(1, len(delta))
    D = np.asarray(delta[1:], dtype=float)
    pos = D > 0
    if pos.sum() >= 2:
        slope = np.polyfit(np.log(m[pos]), np.log(D[pos]), 1)[0]
        gamma = max(1, int(math.ceil(slope - 1e-9)))
    else:
        gamma = 1
    dlt = float(np.max(D / m**gamma)) if D.size else 0.0
    return max(dlt, 1.0), gamma


def compute_U_theory(
    inst: Instance,
    structure: str = "banded",
    *,
    w: int | None = None,
    delta: float | None = None,
    gamma: int | None = None,
    mu: tuple[float, float] | None = None,
) -> float:
    """A-priori bound on |x*|_inf from the decay of the inverse Hessian."""
    if mu is None:
        mu_min, mu_max, _ = extreme_eigenvalues(inst.Q)
    else:
        mu_min, mu_max = mu
    if not (mu_min > 0 and math.isfinite(mu_max)):
        raise NotPositiveDefinite("condition number unavailable")
    C1, rho = _decay_constants(mu_min, mu_max)
    cinf = float(np.max(np.abs(inst.c))) if inst.n else 0.0
    if structure == "banded":
        w = inst.Q.bandwidth() if w is None else w
        return 2.0 * max(w, 1) * C1 * cinf / (1.0 - rho)
    if structure == "volume_growth":
        if delta is None or gamma is None:
            raise InputError("volume growth needs delta and gamma")
        return delta * math.gamma(gamma + 1) * C1 * cinf / (1.0 - rho) ** (gamma + 1)
    raise InputError(f"unknown structure {structure!r}")


def decay_diagnostic(Q: SparseSymMatrix, I) -> float:
    """max over i, j in I of |[inv(Q_II)]_ij| - C1 rho^dist(i, j).

    Distances are shortest paths in the support graph of the full matrix.
    A nonpositive result means the decay bound holds for this sample.
    """
    I = np.asarray(I, dtype=np.intp)
    if I.size > 2000:
        raise InputError("index set too large for dense inversion")
    ev = np.linalg.eigvalsh(Q.toarray()) if Q.n <= 4096 else None
    if ev is not None:
        mu_min, mu_max = float(ev[0]), float(ev[-1])
    else:
        mu_min, mu_max, _ = extreme_eigenvalues(Q)
    C1, rho = _decay_constants(mu_min, mu_max)
    sub = Q.submatrix(I)
    try:
        inv = np.linalg.inv(sub)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("singular principal submatrix") from exc
    pattern = Q.csr.copy()
    pattern.data[:] = 1.0
    dist = scipy.sparse.csgraph.shortest_path(pattern, unweighted=True, indices=I)[:, I]
    with np.errstate(invalid="ignore"):
        bound = np.where(np.isinf(dist), 0.0, C1 * np.power(rho, np.where(np.isinf(dist), 0, dist)))
    return float(np.max(np.abs(inv) - bound))


def _prepare_decomposition(inst: Instance, decomp) -> LabeledDecomposition:
    adj = support_graph(inst.Q)
    if decomp is None:
        T = decompose(adj)
    elif isinstance(decomp, LabeledDecomposition):
        return decomp
    elif isinstance(decomp, TreeDecomposition):
        T = decomp
    elif isinstance(decomp, str) and decomp.startswith("banded:"):
        w = int(decomp.split(":", 1)[1])
        T = path_decomposition_banded(inst.n, min(w, inst.n - 1))
    elif decomp == "auto":
        T = decompose(adj)
    else:
        raise InvalidDecomposition(f"unsupported decomposition spec {decomp!r}")
    check_decomposition(T, adj)
    if not T.is_balanced():
        T = balance(T)
    check_decomposition(T, adj, balanced=True)
    return label(T)


def _resolve_U(opts: SolveOptions, P: Instance, L: LabeledDecomposition, scale, inst: Instance, mu):
    if not isinstance(opts.U, str):
        # bound given for the original variables; normalised x is scale * x
        return float(opts.U) * float(np.max(scale))
    if opts.structure == "banded":
        w = min(P.Q.bandwidth(), inst.Q.bandwidth())
        return compute_U_theory(P, "banded", w=w, mu=mu)
    adj = relabel_graph(support_graph(P.Q), np.arange(P.n))
    dlt, gam = fit_volume_growth(neighborhood_sizes(L, adj, min(P.n, 16)))
    return compute_U_theory(P, "volume_growth", delta=dlt, gamma=gam, mu=mu)


def solve(inst: Instance, decomp=None, opts: SolveOptions | None = None) -> Solution:
    """Optimal (x, z) for the instance.

    ``decomp`` may be None (min-fill heuristic), ``"banded:w"``, a
    :class:`TreeDecomposition` over the original indices, or a ready
    :class:`LabeledDecomposition`.
    """
    opts = opts or SolveOptions()
    t0 = time.perf_counter()
    base = fix_nonpositive_lambda(inst)
    scaled, scale = normalize_diagonal(base)
    diag = validate(scaled)
    L = _prepare_decomposition(scaled, decomp)
    if L.n != inst.n:
        raise InvalidDecomposition(f"decomposition covers {L.n} nodes, instance has {inst.n}")
    P = scaled.permute(L.order)
    U = _resolve_U(opts, P, L, scale, scaled, (diag.mu_min, diag.mu_max))

    mode = opts.prune
    if mode == "auto":
        mode = "path" if L.is_path else "exact"
    stats = SolveStats(U=U, width=L.width, prune=mode, mu_min=diag.mu_min, mu_max=diag.mu_max)

    t1 = time.perf_counter()
    xp, zp, fstar = _run_dp(P, L, U, mode, opts, stats)
    stats.time_dp = time.perf_counter() - t1

    x_scaled = np.empty(inst.n)
    z = np.empty(inst.n, dtype=bool)
    x_scaled[L.order] = xp
    z[L.order] = zp
    x = x_scaled / scale
    stats.dp_objective = fstar + base.offset
    objective = evaluate_objective(inst, x, z | ~inst.indicator)
    stats.time_total = time.perf_counter() - t0
    return Solution(x, z | ~inst.indicator, objective, stats)


def _run_dp(P: Instance, L: LabeledDecomposition, U: float, mode: str, opts: SolveOptions, stats):
    n = P.n
    rows = _Rows(P.Q)
    c = P.c
    lam = P.lam
    ind = P.indicator
    store = opts.store_parametric_costs
    prune = {"exact": prune_exact_indices, "path": prune_path_indices}.get(mode)

    g: list[PiecewiseQuad | None] = [None] * n
    f_keep: list[PiecewiseQuad | None] = [None] * n
    # provenance for the memory-light backtrack: per f_u piece, the g piece
    # chosen from each parent
    src: list[np.ndarray | None] = [None] * n

    def quad(nodes) -> QuadPiece:
        nodes = tuple(nodes)
        return QuadPiece(nodes, rows.block(nodes), c[list(nodes)], 0.0)

    for u in range(n):
        bag = L.bags[u]
        ps = L.parents[u]
        total = 1
        for v in ps:
            total *= len(g[v])
        if total > opts.max_pieces:
            raise PieceLimitExceeded(
                f"bag {u} would hold {total} pieces (limit {opts.max_pieces}); "
                "try a smaller U or a narrower decomposition"
            )
        if u > L.root:
            fu = g[u - 1]
            idx = np.arange(len(fu))[:, None]
        else:
            h = quad(bag)
            fu = combine(h, [(g[v], quad(L.bags[v][1:])) for v in ps], bag)
            counts = [len(g[v]) for v in ps]
            idx = np.indices(counts).reshape(len(counts), -1).T if counts else np.zeros((1, 0), np.intp)
        stats.pieces_pre.append(len(fu))
        if prune is not None and len(fu) > 1:
            keep = prune(fu, U)
            if opts.on_prune is not None:
                opts.on_prune(u, fu, keep, U)
            fu = fu.take(keep)
            idx = idx[keep]
        stats.pieces_post.append(len(fu))
        if store:
            f_keep[u] = fu
        else:
            src[u] = idx
        g[u] = eliminate_with_indicator(fu, u, float(lam[u]), bool(ind[u]))
        for v in ps:
            # every bag has a single child, so g_v is consumed exactly once
            g[v] = None

    fstar = float(np.min(g[n - 1].d))
    if store:
        x, z = _backward(L, f_keep, lam, ind)
    else:
        x, z = _backtrack(P, L, g[n - 1], src, ind)
    return x, z, fstar


def _backward(L: LabeledDecomposition, f: list[PiecewiseQuad], lam, ind):
    """Fix coordinates from the root outward, one 1-D minimisation per bag."""
    n = L.n
    x = np.zeros(n)
    z = np.zeros(n, dtype=bool)
    for u in range(n - 1, -1, -1):
        fu = f[u]
        if fu.coords[0] != u:
            raise InvalidDecomposition(f"bag {u} is not led by its own label")
        rest = list(fu.coords[1:])
        xr = x[rest]
        a = fu.A[:, 0, 0]
        beta = fu.b[:, 0] + fu.A[:, 0, 1:] @ xr
        gamma = 0.5 * np.einsum("i,nij,j->n", xr, fu.A[:, 1:, 1:], xr) + fu.b[:, 1:] @ xr + fu.d
        free = gamma - 0.5 * beta * beta / a
        if ind[u]:
            free = free + lam[u]
            i0 = int(np.argmin(gamma))
            i1 = int(np.argmin(free))
            if gamma[i0] <= free[i1]:
                continue
        else:
            i1 = int(np.argmin(free))
        x[u] = -beta[i1] / a[i1]
        z[u] = True
    return x, z


def _backtrack(P: Instance, L: LabeledDecomposition, g_root: PiecewiseQuad, src, ind):
    """Recover the winning support pattern, then solve for x on it."""
    n = L.n
    z = np.zeros(n, dtype=bool)
    chosen = np.full(n, -1, dtype=np.int64)
    d = g_root.d
    chosen[n - 1] = int(np.argmin(d))
    for u in range(n - 1, -1, -1):
        j = int(chosen[u])
        if j < 0:
            raise InvalidDecomposition(f"bag {u} was never reached while backtracking")
        Nf = len(src[u])
        if ind[u]:
            z[u] = j >= Nf
            i = j % Nf
        else:
            z[u] = True
            i = j
        for k, v in enumerate(L.parents[u]):
            chosen[v] = src[u][i, k]
    x = np.zeros(n)
    J = np.flatnonzero(z)
    if J.size:
        QJ = P.Q.csr[J][:, J].tocsc()
        x[J] = np.atleast_1d(scipy.sparse.linalg.spsolve(QJ, -P.c[J]))
    return x, z
