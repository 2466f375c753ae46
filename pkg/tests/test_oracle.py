from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_instance
from twmiqp.errors import TooManyIndicators
from twmiqp.instance import Instance, SparseSymMatrix, evaluate_objective
from twmiqp.oracle import MAX_INDICATORS, brute_force, pattern_value


@given(st.integers(0, 10_000), st.integers(1, 10), st.integers(1, 3))
@settings(max_examples=40, deadline=None)
def test_stationary_on_support(seed, n, w):
    inst = random_instance(np.random.default_rng(seed), n, w, "mixed")
    sol = brute_force(inst)
    J = np.flatnonzero(sol.z)
    grad = inst.Q.toarray() @ sol.x + inst.c
    assert np.allclose(grad[J], 0.0, atol=1e-8 * (1 + np.abs(inst.c).max()))
    assert np.all(sol.x[~sol.z] == 0.0)
    assert sol.objective == pytest.approx(evaluate_objective(inst, sol.x, sol.z), abs=1e-9)


@given(st.integers(0, 10_000), st.integers(1, 8), st.integers(1, 3))
@settings(max_examples=40, deadline=None)
def test_lower_bound_on_random_patterns(seed, n, w):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, n, w, "balanced")
    best = brute_force(inst).objective
    Qd = inst.Q.toarray()
    for _ in range(20):
        z = rng.random(n) < 0.5
        val, x = pattern_value(Qd, inst, z)
        assert best <= val + 1e-12
        # any x on the support is no better than the pattern minimiser
        xr = np.where(z, rng.normal(size=n), 0.0)
        assert val <= evaluate_objective(inst, xr, z) + 1e-9


def test_too_many_indicators():
    n = MAX_INDICATORS + 1
    inst = Instance(SparseSymMatrix.from_dense(np.eye(n)), np.ones(n), np.ones(n))
    with pytest.raises(TooManyIndicators):
        brute_force(inst)


def test_huge_penalties_select_nothing(rng):
    inst = random_instance(rng, 8, 2, "balanced")
    inst = Instance(inst.Q, inst.c, np.full(8, 1e6))
    sol = brute_force(inst)
    assert sol.objective == 0.0 and not sol.z.any()


def test_tie_prefers_smaller_pattern():
    # selecting gains exactly lambda: both patterns cost 0
    inst = Instance(SparseSymMatrix.from_dense(np.eye(1)), np.array([-2.0]), np.array([2.0]))
    sol = brute_force(inst)
    assert sol.objective == 0.0 and sol.z.tolist() == [False]
