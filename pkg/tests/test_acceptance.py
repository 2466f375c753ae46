"""End-to-end acceptance criteria.

Each test prints one PASS/FAIL line (also repeated in the terminal summary)
and then asserts the same verdict.
"""

from __future__ import annotations

import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, suite
from twmiqp.esoc import (
    EsocConfig,
    evaluate,
    ingest_csv,
    solve_esoc,
    synthetic_series,
)
from twmiqp.gen import gen_banded, gen_low_treewidth, tune_nu
from twmiqp.instance import evaluate_objective, normalize_diagonal
from twmiqp.oracle import brute_force
from twmiqp.solver import SolveOptions, compute_U_theory, decay_diagnostic, solve

SUITE_SEED = 20240601
LIGHT = dict(store_parametric_costs=False)


def report(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def skip(name: str, reason: str) -> None:
    line = f"SKIP  {name}: {reason}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    pytest.skip(reason)


@pytest.fixture(scope="module")
def core_suite():
    """200 small instances with their oracle solutions."""
    cases = suite(200, SUITE_SEED, n_range=(2, 14), widths=(1, 2, 3))
    return [(n, w, regime, inst, brute_force(inst)) for n, w, regime, inst in cases]


def rel(a: float, b: float) -> float:
    return abs(a - b) / (1 + abs(b))


# correctness ------------------------------------------------------------------------


def test_oracle_equivalence(core_suite):
    worst_obj = worst_self = 0.0
    bad = 0
    t0 = time.perf_counter()
    for n, w, regime, inst, ref in core_suite:
        sol = solve(inst, f"banded:{w}")
        e_obj = rel(sol.objective, ref.objective)
        # the returned point evaluated from scratch against the DP value
        e_self = rel(evaluate_objective(inst, sol.x, sol.z), sol.stats.dp_objective)
        worst_obj, worst_self = max(worst_obj, e_obj), max(worst_self, e_self)
        bad += (e_obj > 1e-6) or (e_self > 1e-8)
    el = time.perf_counter() - t0
    report("oracle equivalence", bad == 0 and el < 120,
           f"{len(core_suite)} instances, {bad} mismatches, max rel gap {worst_obj:.1e} (tol 1e-6), "
           f"max self-consistency {worst_self:.1e} (tol 1e-8), {el:.1f}s")


def test_unpruned_equals_pruned(core_suite):
    worst = 0.0
    for n, w, regime, inst, ref in core_suite:
        a = solve(inst, f"banded:{w}", SolveOptions(prune="none")).objective
        b = solve(inst, f"banded:{w}", SolveOptions(prune="exact")).objective
        worst = max(worst, abs(a - b))
    report("prune=none vs exact", worst <= 1e-9, f"max |diff| {worst:.1e} over {len(core_suite)} instances (tol 1e-9)")


def _collect(inst, w, mode, U):
    seen = {}

    def hook(u, f, keep, U_used):
        seen[u] = (f, keep, U_used)

    opts = SolveOptions(prune=mode, on_prune=hook) if U is None else SolveOptions(prune=mode, U=U, on_prune=hook)
    solve(inst, f"banded:{w}", opts)
    return seen


def test_pruning_soundness():
    cases = suite(50, SUITE_SEED + 1, n_range=(3, 12), widths=(1, 2, 3))
    rng = np.random.default_rng(7)
    worst = 0.0
    checked = 0
    for k, (n, w, regime, inst) in enumerate(cases):
        mode = "path" if k % 2 == 0 else "exact"
        # with an infinite box only exact duplicates are dropped, which leaves f_u unchanged
        full = _collect(inst, w, "exact", np.inf)
        pruned = _collect(inst, w, mode, None)
        for u, (f, keep, U) in pruned.items():
            f_kept = f.take(keep)
            f_ref = full[u][0]
            pts = rng.uniform(-U, U, size=(200, len(f.coords)))
            worst = max(worst, float(np.max(np.abs(f_kept.min_many(pts) - f_ref.min_many(pts)))))
            checked += 1
    report("pruning soundness", worst <= 1e-8 and checked > 0,
           f"{checked} bags over 50 instances, max |pruned - unpruned| {worst:.1e} (tol 1e-8)")


def test_solution_bound(core_suite):
    viol = 0
    worst = 0.0
    for n, w, regime, inst, ref in core_suite:
        sol = solve(inst, f"banded:{w}", SolveOptions(**LIGHT))
        U = compute_U_theory(inst)
        ratio = float(np.max(np.abs(sol.x))) / U
        worst = max(worst, ratio)
        viol += ratio > 1
    report("solution bound", viol == 0, f"{viol} violations, max |x*|_inf / U_theory = {worst:.3f}")


def test_decay_diagnostic():
    rng = np.random.default_rng(11)
    viol = samples = 0
    worst = -np.inf
    for k in range(50):
        n = int(rng.integers(10, 201))
        w = int(rng.integers(2, 6))
        nu = float(rng.uniform(0.1, 3.0))
        if k % 2 == 0:
            Q = gen_banded(n, w, nu, seed=k).Q
        else:
            Q = gen_low_treewidth(n, w, int(rng.integers(1, w)), nu, seed=k)[0].Q
        subsets = [np.arange(n), np.arange(n // 3, n // 3 + max(2, n // 3))]
        for _ in range(6):
            size = int(rng.integers(2, n + 1))
            subsets.append(np.sort(rng.choice(n, size, replace=False)))
        for I in subsets:
            v = decay_diagnostic(Q, I)
            worst = max(worst, v)
            viol += v > 1e-12
            samples += 1
    report("decay diagnostic", viol == 0,
           f"50 matrices, {samples} principal submatrices, {viol} violations, max excess {worst:.2e}")


# scale -----------------------------------------------------------------------------


def test_retained_pieces_scale():
    parts = []
    ok = True
    for w, cap in ((2, 200), (4, 5000)):
        means = []
        for seed in range(3):
            _, inst = tune_nu(1000, w, 7.0, seed=seed)
            means.append(solve(inst, f"banded:{w}", SolveOptions(**LIGHT)).stats.mean_retained)
        ok &= max(means) <= cap
        parts.append(f"w={w} mean retained {', '.join(f'{m:.1f}' for m in means)} (cap {cap})")
    report("retained pieces at n=1000", ok, "; ".join(parts))


def test_linear_scaling():
    times = {}
    for n in (500, 2000):
        ts = []
        for seed in range(5):
            _, inst = tune_nu(n, 2, 7.0, seed=seed)
            ts.append(solve(inst, "banded:2", SolveOptions(**LIGHT)).stats.time_dp)
        times[n] = float(np.median(ts))
    ratio = times[2000] / times[500]
    report("linear scaling", 2 <= ratio <= 8,
           f"median DP time {times[500]:.3f}s at n=500, {times[2000]:.3f}s at n=2000, ratio {ratio:.2f} (band [2, 8])")


def test_treewidth_beats_banded():
    wins = 0
    pairs = []
    for seed in range(5):
        inst, T = gen_low_treewidth(1000, 4, 2, 0.5, seed)
        a = solve(inst, T, SolveOptions(**LIGHT))
        b = solve(inst, "banded:4", SolveOptions(**LIGHT))
        wins += a.stats.mean_retained < b.stats.mean_retained
        pairs.append(f"{a.stats.mean_retained:.0f}/{b.stats.mean_retained:.0f}")
    report("tree decomposition vs banded", wins >= 4,
           f"fewer mean pieces on {wins}/5 trials (tree/banded: {', '.join(pairs)})")


def test_U_sweep(core_suite):
    _, inst = tune_nu(1000, 4, 7.0, seed=0)
    scaled, _ = normalize_diagonal(inst)
    U_th = compute_U_theory(scaled)
    factors = [1.0, 0.5, 0.25, 0.1, 0.05, 0.01]
    pieces = [0.0] * len(factors)
    times = [np.inf] * len(factors)
    # repeats go round-robin over the bounds so a slow spell on the machine
    # does not land on a single bound
    for _ in range(5):
        for k, f in enumerate(factors):
            sol = solve(scaled, "banded:4", SolveOptions(U=f * U_th, **LIGHT))
            pieces[k] = sol.stats.mean_retained
            times[k] = min(times[k], sol.stats.time_dp)
    pieces_ok = all(b <= a for a, b in zip(pieces, pieces[1:]))
    # wall-clock noise: allow 25% plus 20 ms between neighbouring bounds
    times_ok = all(b <= 1.25 * a + 0.02 for a, b in zip(times, times[1:]))
    gaps = [rel(solve(inst, f"banded:{w}", SolveOptions(U="theory")).objective, ref.objective)
            for n, w, regime, inst, ref in core_suite if n <= 12]
    gap_ok = max(gaps) <= 1e-6
    report("U sweep", pieces_ok and times_ok and gap_ok,
           f"mean pieces {[round(p, 1) for p in pieces]}, best DP times {[round(t, 3) for t in times]}s, "
           f"max oracle gap at U_theory {max(gaps):.1e} over {len(gaps)} instances")


# ESOC ------------------------------------------------------------------------------


def test_esoc_synthetic_quality():
    ts, pos = synthetic_series(500, 0.3, seed=1)
    t0 = time.perf_counter()
    summary, full = evaluate(ts, split=0.5, workers=os.cpu_count() or 1)
    el = time.perf_counter() - t0
    ratio = summary["esoc"]["test_mse"] / summary["ses"]["test_mse"]
    flagged = float(full.outlier_mask[pos].mean())
    report("ESOC synthetic quality", ratio < 0.25 and flagged >= 0.9 and el < 300,
           f"test MSE ESOC {summary['esoc']['test_mse']:.4f} vs SES {summary['ses']['test_mse']:.4f} "
           f"(ratio {ratio:.3f} < 0.25), spikes flagged {flagged:.0%} (>= 90%), {el:.1f}s")


def test_esoc_long_series():
    ts, _ = synthetic_series(1000, 0.3, seed=3)
    times = []
    for beta in (0.05, 0.2, 0.5):
        t0 = time.perf_counter()
        solve_esoc(ts, EsocConfig(beta, 0.01))
        times.append(time.perf_counter() - t0)
    report("ESOC at T=1000", max(times) < 300, f"solve times {[round(t, 1) for t in times]}s (limit 300s)")


NAB_FILES = {
    "CPU-1": ("ec2_cpu_utilization_53ea38.csv", 2000, (0.0101, 0.0063, 0.0106, 0.0068)),
    "CPU-2": ("ec2_cpu_utilization_ac20cd.csv", 2000, (9.1930, 3.0941, 5.3983, 3.1840)),
    "CPU-3": ("rds_cpu_utilization_e47b3b.csv", 2000, (6.4085, 0.1404, 0.8021, 0.1649)),
    "Traffic": ("speed_7578.csv", 1127, (20.2650, 6.7490, 65.5931, 6.0920)),
}


def test_nab_reference_values():
    name = "NAB reference values"
    root = os.environ.get("NAB_DATA_DIR")
    if not root:
        skip(name, "NAB_DATA_DIR not set; the benchmark files are user supplied")
    parts = []
    ok = True
    for label, (fname, T, ref) in NAB_FILES.items():
        hits = sorted(Path(root).rglob(fname))
        if not hits:
            report(name, False, f"{fname} not found under {root}")
        ts = ingest_csv(hits[0]).head(T)
        summary, _ = evaluate(ts, split=0.5, workers=os.cpu_count() or 1)
        got = (summary["ses"]["train_mse"], summary["esoc"]["train_mse_full"],
               summary["ses"]["test_mse"], summary["esoc"]["test_mse"])
        order = got[1] <= got[0] and got[3] <= got[2]
        close = all(abs(g - r) <= 0.25 * r for g, r in zip(got, ref))
        ok &= order and close
        parts.append(f"{label} SES/ESOC train {got[0]:.4g}/{got[1]:.4g} test {got[2]:.4g}/{got[3]:.4g} "
                     f"(order {'ok' if order else 'wrong'}, within 25% {'yes' if close else 'no'})")
    report(name, ok, "; ".join(parts))
