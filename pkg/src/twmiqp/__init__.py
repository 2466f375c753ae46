"""Exact MIQP solver for indicator-constrained problems whose Hessian has a
sparse, low-treewidth support graph, plus an outlier-robust exponential
smoothing model built on it."""

from __future__ import annotations

from .errors import (
    InputError,
    NotPositiveDefinite,
    NumericalError,
    PieceLimitExceeded,
    ResourceLimit,
    TwmiqpError,
)
from .instance import (
    Instance,
    Solution,
    SparseSymMatrix,
    evaluate_objective,
    fix_nonpositive_lambda,
    load_instance,
    normalize_diagonal,
    save_instance,
    support_graph,
    validate,
)
from .oracle import brute_force
from .solver import SolveOptions, SolveStats, compute_U_theory, decay_diagnostic, solve
from .treedec import TreeDecomposition, balance, decompose, label, path_decomposition_banded

__all__ = [
    "InputError",
    "NotPositiveDefinite",
    "NumericalError",
    "PieceLimitExceeded",
    "ResourceLimit",
    "TwmiqpError",
    "Instance",
    "Solution",
    "SparseSymMatrix",
    "evaluate_objective",
    "fix_nonpositive_lambda",
    "load_instance",
    "normalize_diagonal",
    "save_instance",
    "support_graph",
    "validate",
    "brute_force",
    "SolveOptions",
    "SolveStats",
    "compute_U_theory",
    "decay_diagnostic",
    "solve",
    "TreeDecomposition",
    "balance",
    "decompose",
    "label",
    "path_decomposition_banded",
]

__version__ = "0.1.0"
