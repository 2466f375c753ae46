"""Command line entry point: ``twmiqp <command> ...``.

Results go to stdout (or ``--out``) as JSON or CSV; failures print a JSON
error object on stderr and exit with the error's code (2 input, 3 numerical,
4 resource limit).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import bigm, esoc
from .errors import InputError, TwmiqpError
from .gen import gen_banded, gen_low_treewidth, kappa2, tune_nu
from .instance import load_instance, save_instance, validate
from .oracle import brute_force
from .solver import SolveOptions, compute_U_theory, solve
from .treedec import load_decomposition, save_decomposition

SEED_ENV = "TWMIQP_SEED"
TIMING_KEYS = ("time_total", "time_dp")


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV, "0")
    try:
        return int(raw)
    except ValueError:
        raise InputError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma separated list of numbers: {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma separated list of integers: {text!r}") from None


def _u_arg(text: str):
    if text in ("auto", "theory"):
        return text
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("U must be 'auto', 'theory' or a positive number") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("U must be positive")
    return v


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _clean(obj):
    """Replace non-finite floats so the output stays valid JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _decomp_arg(spec: str):
    if spec == "auto" or spec.startswith("banded:"):
        return spec
    return load_decomposition(spec)


def _solution_doc(sol, timing: bool) -> dict:
    doc = sol.to_dict()
    if not timing:
        for k in TIMING_KEYS:
            doc["stats"].pop(k, None)
    return _clean(doc)


def cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    opts = SolveOptions(U=args.u, prune=args.prune, structure=args.structure,
                        max_pieces=args.max_pieces,
                        store_parametric_costs=not args.low_memory)
    sol = solve(inst, _decomp_arg(args.decomp), opts)
    _emit(_dump(_solution_doc(sol, not args.no_timing)), args.out)
    return 0


def cmd_oracle(args) -> int:
    inst = load_instance(args.instance)
    validate(inst)
    sol = brute_force(inst)
    _emit(_dump(_clean(sol.to_dict())), args.out)
    return 0


def cmd_gen(args) -> int:
    seed = default_seed() if args.seed is None else args.seed
    if args.family == "banded":
        if args.kappa is not None:
            nu, inst = tune_nu(args.n, args.w, args.kappa, seed)
        else:
            nu, inst = args.nu, gen_banded(args.n, args.w, args.nu, seed)
        T = None
    else:
        if args.omega is None:
            raise InputError("--omega is required for the low-treewidth family")
        nu = args.nu
        inst, T = gen_low_treewidth(args.n, args.w, args.omega, nu, seed)
    save_instance(inst, args.out)
    if args.decomp_out:
        if T is None:
            raise InputError("--decomp-out is only available for the low-treewidth family")
        save_decomposition(T, args.decomp_out)
    info = {"family": args.family, "n": args.n, "w": args.w, "seed": seed, "nu": nu,
            "kappa2": kappa2(inst), "out": str(args.out)}
    sys.stdout.write(_dump(info))
    return 0


def _bench_cell(job):
    family, n, w, omega, kappa, nu, seed, prune, decomp = job
    if family == "banded":
        if kappa is not None:
            nu, inst = tune_nu(n, w, kappa, seed)
        else:
            inst = gen_banded(n, w, nu, seed)
        d = f"banded:{w}"
    else:
        inst, T = gen_low_treewidth(n, w, omega, nu, seed)
        d = T if decomp == "tree" else f"banded:{w}"
    sol = solve(inst, d, SolveOptions(prune=prune, store_parametric_costs=False))
    st = sol.stats
    return {
        "n": n, "w": w, "seed": seed, "kappa2": kappa2(inst), "time": st.time_total,
        "time_dp": st.time_dp, "avg_retained": st.mean_retained,
        "max_retained": st.max_retained, "objective": sol.objective,
    }


def cmd_bench(args) -> int:
    base = default_seed() if args.seed is None else args.seed
    jobs = [
        (args.family, n, w, args.omega, args.kappa, args.nu, base + t, args.prune, args.decomp)
        for n in args.n for w in args.w for t in range(args.trials)
    ]
    workers = args.workers or (os.cpu_count() or 1)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_bench_cell, jobs))
    else:
        rows = [_bench_cell(j) for j in jobs]
    cols = ["n", "w", "seed", "kappa2", "avg_retained", "max_retained", "objective"]
    if not args.no_timing:
        cols[4:4] = ["time", "time_dp"]
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
    wr.writeheader()
    for r in rows:
        wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    _emit(buf.getvalue(), args.out)
    return 0


def cmd_esoc(args) -> int:
    ts = esoc.ingest_csv(args.csv)
    workers = args.workers or (os.cpu_count() or 1)
    summary, full = esoc.evaluate(
        ts, args.split, args.beta_grid, args.lambda_grid, args.mu1, args.mu2, workers,
        None if args.u == "auto" else args.u,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    esoc.write_result_csv(out / "result.csv", ts, full)
    esoc.write_summary(out / "summary.json", _clean(summary))
    sys.stdout.write(_dump(_clean({k: summary[k] for k in ("T", "train_size", "esoc", "ses")})))
    return 0


def cmd_export_bigm(args) -> int:
    inst = load_instance(args.instance)
    U = args.u
    if isinstance(U, str):
        U = compute_U_theory(inst)
    _emit(bigm.to_lp(inst, U, Path(args.instance).stem), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twmiqp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve an instance with the tree decomposition DP")
    s.add_argument("instance")
    s.add_argument("--decomp", default="auto", help="auto, banded:W or a decomposition JSON file")
    s.add_argument("--u", type=_u_arg, default="auto", help="auto, theory or a bound on |x*|_inf")
    s.add_argument("--prune", choices=("exact", "path", "auto", "none"), default="auto")
    s.add_argument("--structure", choices=("banded", "volume_growth"), default="banded")
    s.add_argument("--max-pieces", type=int, default=2_000_000)
    s.add_argument("--low-memory", action="store_true", help="backtrack from pattern provenance only")
    s.add_argument("--no-timing", action="store_true", help="omit wall-clock fields")
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("oracle", help="solve by enumerating all indicator patterns")
    s.add_argument("instance")
    s.add_argument("--out")
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("gen", help="generate a random instance")
    s.add_argument("family", choices=("banded", "lowtw"))
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--w", type=int, required=True)
    s.add_argument("--omega", type=int)
    s.add_argument("--nu", type=float, default=1.0)
    s.add_argument("--kappa", type=float, help="tune nu to reach this condition number (banded)")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--decomp-out")
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("bench", help="generate and solve a sweep, CSV rows out")
    s.add_argument("--family", choices=("banded", "lowtw"), default="banded")
    s.add_argument("--n", type=_int_list, required=True)
    s.add_argument("--w", type=_int_list, required=True)
    s.add_argument("--omega", type=int)
    s.add_argument("--trials", type=int, default=5)
    s.add_argument("--nu", type=float, default=1.0)
    s.add_argument("--kappa", type=float)
    s.add_argument("--prune", choices=("exact", "path", "auto", "none"), default="auto")
    s.add_argument("--decomp", choices=("tree", "banded"), default="tree",
                   help="low-treewidth family: use its tree decomposition or the banded path")
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int, default=0, help="0 means one per core")
    s.add_argument("--no-timing", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("esoc", help="tune and fit ESOC on a timestamp,value CSV")
    s.add_argument("csv")
    s.add_argument("--beta-grid", type=_float_list, default=list(esoc.BETA_GRID))
    s.add_argument("--lambda-grid", type=_float_list, default=list(esoc.LAMBDA_GRID))
    s.add_argument("--split", type=float, default=0.5)
    s.add_argument("--mu1", type=float, default=esoc.MU1)
    s.add_argument("--mu2", type=float, default=esoc.MU2)
    s.add_argument("--u", type=_u_arg, default="auto", help="auto uses twice the largest |y|")
    s.add_argument("--workers", type=int, default=0, help="0 means one per core")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_esoc)

    s = sub.add_parser("export-bigm", help="write the big-M MIQP in LP format")
    s.add_argument("instance")
    s.add_argument("--u", type=_u_arg, default="theory")
    s.add_argument("--out")
    s.set_defaults(func=cmd_export_bigm)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TwmiqpError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        sys.stderr.write(json.dumps(err) + "\n")
        return exc.exit_code
    except OSError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": 2}
        sys.stderr.write(json.dumps(err) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
