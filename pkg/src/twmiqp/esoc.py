"""Exponential smoothing with outlier correction (ESOC).

The model fits a smoothed signal ``x`` and a sparse outlier vector ``o`` to
observations ``y`` by minimising

    sum_t (y_t - x_t - o_t)^2 + sum_t lam_t [o_t != 0]
      + mu1 sum_{t>=2} (beta (y_t - o_t) + (1 - beta) x_{t-1} - x_t)^2
      + mu2 |o|^2

Variables are interleaved as o_1, x_1, o_2, x_2, ... which gives a Hessian of
bandwidth 2, so a path decomposition of width 2 applies.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import AllConfigsDiscarded, AllFlagged, IngestError, InputError, PieceLimitExceeded
from .instance import Instance, SparseSymMatrix
from .solver import SolveOptions, solve

BETA_GRID = (0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99)
LAMBDA_GRID = (1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 5e-2)
MU1 = 1.2
MU2 = 0.001
MAX_FLAGGED = 0.10
TUNE_MAX_PIECES = 200_000


@dataclass
class TimeSeries:
    y: np.ndarray
    t: list | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.y.size < 2:
            raise InputError("a time series needs at least two observations")
        if not np.all(np.isfinite(self.y)):
            raise InputError("time series contains non-finite values")
        if self.t is not None and len(self.t) != self.y.size:
            raise InputError("timestamps and values differ in length")

    @property
    def T(self) -> int:
        return self.y.size

    def head(self, k: int) -> "TimeSeries":
        return TimeSeries(self.y[:k], None if self.t is None else self.t[:k])


@dataclass
class EsocConfig:
    beta: float
    lam: float | np.ndarray
    mu1: float = MU1
    mu2: float = MU2

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise InputError("beta must lie in (0, 1)")
        if self.mu1 < 0:
            raise InputError("mu1 must be nonnegative")
        if not self.mu2 > 0:
            raise InputError("mu2 must be positive for a positive definite Hessian")


@dataclass
class EsocResult:
    x: np.ndarray
    o: np.ndarray
    outlier_mask: np.ndarray
    forecasts: np.ndarray
    objective: float
    stats: dict = field(default_factory=dict)

    @property
    def outlier_fraction(self) -> float:
        return float(self.outlier_mask.mean())


def o_index(t: int) -> int:
    return 2 * t


def x_index(t: int) -> int:
    return 2 * t + 1


def build_esoc_instance(ts: TimeSeries, cfg: EsocConfig) -> tuple[Instance, dict]:
    """Quadratic form of the ESOC objective as an indicator-constrained QP.

    Each squared term is a weighted residual row ``r = a'v + e``; stacking the
    rows gives Q = 2 R'WR, c = 2 R'We and offset = e'We.
    """
    y = ts.y
    T = y.size
    n = 2 * T
    b = cfg.beta
    rows, cols, vals, e, wts = [], [], [], [], []

    def add(entries, const, weight):
        r = len(e)
        for j, v in entries:
            rows.append(r)
            cols.append(j)
            vals.append(v)
        e.append(const)
        wts.append(weight)

    for t in range(T):
        add([(o_index(t), -1.0), (x_index(t), -1.0)], y[t], 1.0)
        add([(o_index(t), 1.0)], 0.0, cfg.mu2)
        if t >= 1 and cfg.mu1 > 0:
            add([(o_index(t), -b), (x_index(t - 1), 1.0 - b), (x_index(t), -1.0)], b * y[t], cfg.mu1)
    R = sp.csr_matrix((vals, (rows, cols)), shape=(len(e), n))
    W = sp.diags(wts)
    e = np.asarray(e)
    Q = (2.0 * (R.T @ W @ R)).tocsr()
    c = 2.0 * (R.T @ (W @ e))
    offset = float(e @ (W @ e))
    lam = np.broadcast_to(np.asarray(cfg.lam, dtype=float), (T,))
    lam_full = np.zeros(n)
    lam_full[0::2] = lam
    indicator = np.zeros(n, dtype=bool)
    indicator[0::2] = True
    inst = Instance(SparseSymMatrix(Q), c, lam_full, indicator, offset)
    varmap = {"o": np.arange(0, n, 2), "x": np.arange(1, n, 2)}
    return inst, varmap


def esoc_objective(ts: TimeSeries, cfg: EsocConfig, x, o) -> float:
    """Direct evaluation of the ESOC objective (for checks)."""
    y = ts.y
    lam = np.broadcast_to(np.asarray(cfg.lam, dtype=float), y.shape)
    val = float(np.sum((y - x - o) ** 2)) + float(np.sum(lam[o != 0]))
    dyn = cfg.beta * (y[1:] - o[1:]) + (1 - cfg.beta) * x[:-1] - x[1:]
    return val + cfg.mu1 * float(dyn @ dyn) + cfg.mu2 * float(o @ o)


def default_U(ts: TimeSeries) -> float:
    # the data range bounds the optimal x and o; doubled for slack
    return 2.0 * float(np.max(np.abs(ts.y)))


def solve_esoc(ts: TimeSeries, cfg: EsocConfig, U: float | str | None = None, prune: str = "auto",
               max_pieces: int | None = None) -> EsocResult:
    """Fit one configuration.  ``U`` defaults to :func:`default_U`; the
    strings accepted by :class:`SolveOptions` select the generic bound."""
    inst, vm = build_esoc_instance(ts, cfg)
    if U is None:
        # an all-zero series still needs a positive box
        U = default_U(ts) or 1.0
    opts = SolveOptions(U=U, prune=prune)
    if max_pieces is not None:
        opts.max_pieces = max_pieces
    sol = solve(inst, "banded:2", opts)
    x = sol.x[vm["x"]]
    o = sol.x[vm["o"]]
    mask = sol.z[vm["o"]].copy()
    o[~mask] = 0.0
    fc = np.full(ts.T, np.nan)
    fc[1:] = x[:-1]
    stats = sol.stats.to_dict() if hasattr(sol.stats, "to_dict") else {}
    return EsocResult(x, o, mask, fc, sol.objective, stats)


def ses(ts: TimeSeries, beta: float) -> np.ndarray:
    if not 0.0 < beta < 1.0:
        raise InputError("beta must lie in (0, 1)")
    y = ts.y
    x = np.empty_like(y)
    x[0] = y[0]
    for t in range(1, y.size):
        x[t] = beta * y[t] + (1.0 - beta) * x[t - 1]
    return x


def _window(T: int, start: int | None, stop: int | None) -> tuple[int, int]:
    start = 1 if start is None else max(1, start)
    stop = T if stop is None else min(T, stop)
    if stop <= start:
        raise InputError("empty evaluation window")
    return start, stop


def mse_ses(ts: TimeSeries, x, start: int | None = None, stop: int | None = None) -> float:
    """Mean squared one-step forecast error, forecast y_t by x_{t-1}.

    ``start``/``stop`` select 0-based time indices; the default covers every
    step that has a forecast.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != ts.y.shape:
        raise InputError("smoothed signal and series differ in length")
    s, e = _window(ts.T, start, stop)
    err = x[s - 1 : e - 1] - ts.y[s:e]
    return float(np.mean(err * err))


def mse_esoc(ts: TimeSeries, result: EsocResult, start: int | None = None, stop: int | None = None) -> float:
    """Like :func:`mse_ses` but skipping steps flagged as outliers."""
    if result.x.shape != ts.y.shape:
        raise InputError("result and series differ in length")
    s, e = _window(ts.T, start, stop)
    keep = ~result.outlier_mask[s:e]
    if not keep.any():
        raise AllFlagged("every evaluated step is flagged as an outlier")
    err = result.x[s - 1 : e - 1] - ts.y[s:e]
    return float(np.mean(err[keep] ** 2))


@dataclass
class TuneRecord:
    beta: float
    lam: float
    train_mse: float
    flagged_fraction: float
    kept: bool
    status: str = "solved"


@dataclass
class TuneResult:
    beta: float
    lam: float
    train_mse: float
    records: list[TuneRecord]


def _eval_beta(args) -> list[TuneRecord]:
    """All lambdas for one beta, largest first.

    The optimal support size of a uniformly penalized problem cannot grow as
    the penalty grows, so once a lambda flags too many points every smaller
    lambda does too and those are recorded as skipped without solving.
    """
    ts, beta, lambdas, mu1, mu2, U, max_pieces = args
    out = []
    over = False
    for lam in sorted(lambdas, reverse=True):
        if over:
            out.append(TuneRecord(beta, lam, math.nan, math.nan, False, "skipped"))
            continue
        try:
            res = solve_esoc(ts, EsocConfig(beta, lam, mu1, mu2), U, max_pieces=max_pieces)
        except PieceLimitExceeded:
            out.append(TuneRecord(beta, lam, math.nan, math.nan, False, "piece_limit"))
            over = True
            continue
        frac = res.outlier_fraction
        try:
            m = mse_esoc(ts, res)
        except AllFlagged:
            m = math.inf
        ok = frac < MAX_FLAGGED and math.isfinite(m)
        out.append(TuneRecord(beta, lam, m, frac, ok))
        over = frac >= MAX_FLAGGED
    return out


def train_size(T: int, split: float) -> int:
    if not 0.0 < split < 1.0:
        raise InputError("split must lie in (0, 1)")
    k = int(math.floor(split * T))
    if k < 2:
        raise InputError("training prefix needs at least two observations")
    return k


def tune(
    ts: TimeSeries,
    split: float = 0.5,
    betas=BETA_GRID,
    lambdas=LAMBDA_GRID,
    mu1: float = MU1,
    mu2: float = MU2,
    workers: int = 1,
    U: float | None = None,
    max_pieces: int = TUNE_MAX_PIECES,
) -> TuneResult:
    """Grid search on the training prefix.

    Configurations flagging 10% or more of the training points are discarded.
    The lowest training MSE wins; ties go to the smaller lambda, then beta.
    A solve that exceeds ``max_pieces`` in one bag is treated as discarded.
    """
    if not betas or not lambdas:
        raise InputError("grids must be nonempty")
    train = ts.head(train_size(ts.T, split))
    U = default_U(train) if U is None else U
    lambdas = [float(l) for l in lambdas]
    jobs = [(train, float(b), lambdas, mu1, mu2, U, max_pieces) for b in betas]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            groups = list(pool.map(_eval_beta, jobs))
    else:
        groups = [_eval_beta(j) for j in jobs]
    records = [r for g in groups for r in g]
    kept = [r for r in records if r.kept]
    if not kept:
        raise AllConfigsDiscarded("every configuration flags too many points")
    best = min(kept, key=lambda r: (r.train_mse, r.lam, r.beta))
    return TuneResult(best.beta, best.lam, best.train_mse, records)


def tune_ses(ts: TimeSeries, split: float = 0.5, betas=BETA_GRID) -> tuple[float, float]:
    train = ts.head(train_size(ts.T, split))
    scored = [(mse_ses(train, ses(train, b)), b) for b in betas]
    m, b = min(scored)
    return b, m


def evaluate(ts: TimeSeries, split: float = 0.5, betas=BETA_GRID, lambdas=LAMBDA_GRID,
             mu1: float = MU1, mu2: float = MU2, workers: int = 1, U: float | None = None):
    """Tune both models on the prefix, then score one full-series fit on the rest.

    Returns a summary dict and the full-series ESOC result.
    """
    k = train_size(ts.T, split)
    tr = tune(ts, split, betas, lambdas, mu1, mu2, workers, U)
    sb, ses_train = tune_ses(ts, split, betas)
    full = solve_esoc(ts, EsocConfig(tr.beta, tr.lam, mu1, mu2), U)
    x_ses = ses(ts, sb)
    summary = {
        "T": ts.T,
        "train_size": k,
        "esoc": {
            "beta": tr.beta,
            "lambda": tr.lam,
            "mu1": mu1,
            "mu2": mu2,
            "train_mse": tr.train_mse,
            "train_mse_full": mse_esoc(ts, full, stop=k),
            "test_mse": mse_esoc(ts, full, start=k),
            "train_outlier_fraction": float(full.outlier_mask[:k].mean()),
            "outlier_fraction": full.outlier_fraction,
            "test_outlier_fraction": float(full.outlier_mask[k:].mean()),
        },
        "ses": {
            "beta": sb,
            "train_mse": ses_train,
            "test_mse": mse_ses(ts, x_ses, start=k),
        },
        "configs": [asdict(r) for r in tr.records],
    }
    return summary, full


def synthetic_series(T: int, beta: float, sigma: float = 0.1, spike_frac: float = 0.05,
                     spike_scale: float = 10.0, level: float = 5.0, seed: int = 0):
    """Local-level signal for which SES with ``beta`` is the optimal smoother,
    plus spikes of +-spike_scale*sigma at random positions.

    Returns the series and the sorted spike positions.
    """
    rng = np.random.default_rng(seed)
    eps = rng.normal(0.0, sigma, T)
    y = np.empty(T)
    lvl = level
    for t in range(T):
        y[t] = lvl + eps[t]
        lvl += beta * eps[t]
    k = int(round(spike_frac * T))
    pos = np.sort(rng.choice(np.arange(1, T), size=k, replace=False))
    y[pos] += rng.choice([-1.0, 1.0], size=k) * spike_scale * sigma
    return TimeSeries(y), pos


def ingest_csv(path) -> TimeSeries:
    """Read a ``timestamp,value`` file, rejecting malformed rows by line."""
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise IngestError(f"{path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        names = [h.strip().lower() for h in header]
        if "timestamp" not in names or "value" not in names:
            raise IngestError(f"{path}:1: header must contain 'timestamp' and 'value'")
        it, iv = names.index("timestamp"), names.index("value")
        stamps, values = [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                raise IngestError(f"{path}:{line}: blank line")
            if len(row) <= max(it, iv):
                raise IngestError(f"{path}:{line}: expected {len(names)} columns, got {len(row)}")
            try:
                v = float(row[iv])
            except ValueError:
                raise IngestError(f"{path}:{line}: cannot parse value {row[iv]!r}") from None
            if not math.isfinite(v):
                raise IngestError(f"{path}:{line}: non-finite value {row[iv]!r}")
            stamps.append(row[it].strip())
            values.append(v)
    if len(values) < 2:
        raise IngestError(f"{path}: need at least two observations, found {len(values)}")
    return TimeSeries(np.array(values), stamps)


def write_result_csv(path, ts: TimeSeries, res: EsocResult) -> None:
    stamps = ts.t if ts.t is not None else list(range(ts.T))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "y", "x", "o", "flagged", "forecast"])
        for i in range(ts.T):
            fc = "" if np.isnan(res.forecasts[i]) else repr(float(res.forecasts[i]))
            w.writerow([stamps[i], repr(float(ts.y[i])), repr(float(res.x[i])), repr(float(res.o[i])),
                        int(res.outlier_mask[i]), fc])


def write_summary(path, summary: dict) -> None:
    Path(path).write_text(json.dumps(summary, indent=2))
