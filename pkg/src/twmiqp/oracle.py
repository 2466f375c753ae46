"""Reference solver by enumeration of all indicator patterns."""

from __future__ import annotations

import itertools

import numpy as np
import scipy.linalg

from .errors import NotPositiveDefinite, TooManyIndicators
from .instance import Instance, Solution

MAX_INDICATORS = 25


def pattern_value(Qd: np.ndarray, inst: Instance, z: np.ndarray) -> tuple[float, np.ndarray]:
    """Optimal objective and minimiser with the support fixed to ``z``."""
    J = np.flatnonzero(z)
    x = np.zeros(inst.n)
    val = inst.offset + float(inst.lam[inst.indicator & z].sum())
    if J.size:
        try:
            fac = scipy.linalg.cho_factor(Qd[np.ix_(J, J)])
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite("principal submatrix is not positive definite") from exc
        xJ = -scipy.linalg.cho_solve(fac, inst.c[J])
        x[J] = xJ
        val += 0.5 * float(inst.c[J] @ xJ)
    return val, x


def brute_force(inst: Instance) -> Solution:
    """Best pattern over all 2^k indicator settings.

    Patterns are visited in lexicographic order and only strict improvements
    replace the incumbent, so ties resolve to the lexicographically smallest z.
    """
    ind = np.flatnonzero(inst.indicator)
    if ind.size > MAX_INDICATORS:
        raise TooManyIndicators(f"{ind.size} indicator variables exceed the limit of {MAX_INDICATORS}")
    Qd = inst.Q.toarray()
    best_val = np.inf
    best = None
    z = ~inst.indicator.copy()
    for bits in itertools.product((False, True), repeat=ind.size):
        z[ind] = bits
        val, x = pattern_value(Qd, inst, z)
        if val < best_val:
            best_val, best = val, (x, z.copy())
    x, z = best
    return Solution(x, z, best_val, {"patterns": 2 ** int(ind.size)})
