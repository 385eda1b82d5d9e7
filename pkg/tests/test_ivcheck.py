import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flsem.ivcheck import (
    GuardExceeded,
    IvProblem,
    check_identifiability,
    corollary_max_invalid,
)

C1 = np.array([[1, 1, 2, 1, 2], [1, 2, 1, 1, 3]], dtype=float).T
G1 = np.array([2, 3, 3, 8, 5], dtype=float)
C2 = np.array([[1, 1, 1, 2, 2], [1, 2, 3, 2, 3]], dtype=float).T
G2 = np.array([2, 3, 6, 8, 10], dtype=float)


def brute_force_beta(gamma, cmat, U):
    """Independent oracle: least squares on each subset, keep exact fits."""
    L = len(gamma)
    sols = []
    for s in itertools.combinations(range(L), L - U + 1):
        s = list(s)
        b, *_ = np.linalg.lstsq(cmat[s], gamma[s], rcond=None)
        if np.allclose(cmat[s] @ b, gamma[s]):
            sols.append(b)
    return sols


class TestWorkedExamples:
    def test_example_i_identified(self):
        r = check_identifiability(IvProblem(G1, C1, 3))
        assert r.identifiable
        assert np.allclose(r.b, [1, 1])

    def test_example_i_beta(self):
        r = check_identifiability(IvProblem(G1, C1, 3))
        sols = brute_force_beta(G1, C1, 3)
        assert all(np.allclose(s, sols[0]) for s in sols)
        assert np.allclose(r.beta, G1 - C1 @ sols[0])
        assert np.allclose(r.beta, [0, 0, 0, 6, 0])

    def test_example_ii_not_identified(self):
        r = check_identifiability(IvProblem(G2, C2, 4))
        assert not r.identifiable
        b = {tuple(np.round(sol, 8)) for _, sol in r.consistent_subsets}
        assert (1.0, 1.0) in b and (2.0, 2.0) in b

    def test_single_loading(self):
        r = check_identifiability(IvProblem([2, 4], [1, 2], 1))
        assert r.identifiable and np.allclose(r.b, [2]) and np.allclose(r.beta, 0)

    def test_no_consistent_subset(self):
        r = check_identifiability(IvProblem([1, 2, 7], [1, 1, 1], 1))
        assert not r.identifiable and r.reason == "no consistent full-rank subset"

    def test_report_json_is_one_based(self):
        d = check_identifiability(IvProblem(G1, C1, 3)).to_dict()
        assert [1, 2, 3] in [s["subset"] for s in d["consistent_subsets"]]


class TestValidation:
    def test_subset_smaller_than_r(self):
        with pytest.raises(ValueError):
            IvProblem(G1, C1, 5)

    def test_guard(self):
        L = 40
        prob = IvProblem(np.zeros(L), np.ones((L, 1)), 20)
        with pytest.raises(GuardExceeded):
            check_identifiability(prob)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            IvProblem([1, 2], np.ones((3, 1)), 1)


class TestCorollary:
    @pytest.mark.parametrize("L,R,expected", [(5, 2, 2), (3, 3, 0), (10, 3, 4)])
    def test_values(self, L, R, expected):
        assert corollary_max_invalid(L, R) == expected

    def test_rejects_l_below_r(self):
        with pytest.raises(ValueError):
            corollary_max_invalid(2, 3)


class TestProperties:
    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10**6))
    def test_permutation_invariance(self, seed):
        perm = np.random.default_rng(seed).permutation(5)
        base = check_identifiability(IvProblem(G1, C1, 3))
        r = check_identifiability(IvProblem(G1[perm], C1[perm], 3))
        assert r.identifiable and np.allclose(r.b, base.b)
        assert np.allclose(r.beta, base.beta[perm])
        mapped = {tuple(sorted(perm[list(s)])) for s, _ in r.consistent_subsets}
        assert mapped == {tuple(s) for s, _ in base.consistent_subsets}

    @settings(max_examples=30, deadline=None)
    @given(scale=st.floats(-100, 100).filter(lambda v: abs(v) > 1e-3))
    def test_scaling(self, scale):
        r = check_identifiability(IvProblem(scale * G1, scale * C1, 3))
        assert r.identifiable and np.allclose(r.b, [1, 1])
        assert np.allclose(r.beta, scale * np.array([0, 0, 0, 6, 0]))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10**6), L=st.integers(3, 9), R=st.integers(1, 3))
    def test_recovers_truth_within_budget(self, seed, L, R):
        if L < R:
            return
        U = corollary_max_invalid(L, R)
        if U < 1:
            return
        r = np.random.default_rng(seed)
        cmat = r.standard_normal((L, R))  # generic rows: every R-subset full rank
        b = r.standard_normal(R)
        beta = np.zeros(L)
        bad = r.choice(L, U - 1, replace=False)
        beta[bad] = r.uniform(1, 3, U - 1) * r.choice([-1, 1], U - 1)
        rep = check_identifiability(IvProblem(beta + cmat @ b, cmat, U))
        assert rep.identifiable
        assert np.allclose(rep.b, b, atol=1e-6)
        assert np.allclose(rep.beta, beta, atol=1e-6)
