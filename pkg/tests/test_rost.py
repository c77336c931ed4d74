import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rpcsim.errors import NotPositiveSemidefinite, ParameterError
from rpcsim.pd import MassPartition
from rpcsim.rost import (
    OverlapMatrix,
    Rost,
    apply_overlap_function,
    f_alpha,
    is_indecomposable,
    is_ultrametric,
    metric_tail_bound,
    overlap_distance,
    psd_min_eigenvalue,
    rost_distance,
    schur_power,
    state_space,
    step_function,
    ultrametric_excess,
)
from rpcsim.rpc import RpcParams, build_rpc


def brute_ultrametric(q, tol=1e-12):
    n = q.shape[0]
    d = 1.0 - q
    for i, j, k in itertools.product(range(n), repeat=3):
        if len({i, j, k}) == 3 and d[i, j] > max(d[i, k], d[k, j]) + tol:
            return False
    return True


def nested_overlaps(labels, levels):
    """q_ij = levels[depth of the longest shared label prefix], 1 on the diagonal."""
    n = labels.shape[0]
    q = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            shared = 0
            while shared < labels.shape[1] and labels[i, shared] == labels[j, shared]:
                shared += 1
            q[i, j] = 1.0 if i == j else levels[shared]
    return q


@st.composite
def ultrametric_matrices(draw, max_n=12):
    n = draw(st.integers(3, max_n))
    k = draw(st.integers(1, 3))
    labels = np.array(draw(st.lists(st.lists(st.integers(0, 2), min_size=k, max_size=k), min_size=n, max_size=n)))
    levels = np.sort(np.array(draw(st.lists(st.floats(0.0, 0.95), min_size=k + 1, max_size=k + 1, unique=True))))
    return nested_overlaps(labels, levels)


def rost_of(q, masses=None):
    n = q.shape[0]
    m = np.full(n, 1.0 / n) if masses is None else masses
    return Rost(MassPartition(m), OverlapMatrix(q))


def two_by_two(v):
    return np.array([[1.0, v], [v, 1.0]])


class TestOverlapMatrix:
    def test_rejects_asymmetric(self):
        with pytest.raises(ParameterError):
            OverlapMatrix(np.array([[1.0, 0.2], [0.3, 1.0]]))

    def test_rejects_bad_diagonal(self):
        with pytest.raises(ParameterError):
            OverlapMatrix(np.array([[0.9, 0.2], [0.2, 1.0]]))

    def test_read_only(self):
        Q = OverlapMatrix.identity(3)
        with pytest.raises(ValueError):
            Q.q[0, 1] = 0.5

    def test_rost_size_mismatch(self):
        with pytest.raises(ParameterError):
            Rost(MassPartition(np.array([0.5, 0.5])), OverlapMatrix.identity(3))


class TestPsd:
    @pytest.mark.parametrize("v,expected", [(0.0, 1.0), (1.0, 0.0), (1.5, -0.5)])
    def test_two_by_two(self, v, expected):
        assert psd_min_eigenvalue(two_by_two(v)) == pytest.approx(expected, abs=1e-14)

    def test_identity(self):
        assert psd_min_eigenvalue(OverlapMatrix.identity(5)) == pytest.approx(1.0)


class TestSchurPower:
    def test_r_one(self):
        Q = OverlapMatrix(two_by_two(0.4))
        assert schur_power(Q, 1) == Q

    def test_identity(self):
        assert schur_power(OverlapMatrix.identity(4), 5) == OverlapMatrix.identity(4)

    def test_cube(self):
        assert schur_power(OverlapMatrix(two_by_two(0.5)), 3).q[0, 1] == pytest.approx(0.125)

    @pytest.mark.parametrize("r", [0, -1, 1.5])
    def test_domain(self, r):
        with pytest.raises(ParameterError):
            schur_power(OverlapMatrix.identity(2), r)

    @settings(max_examples=30, deadline=None)
    @given(q=ultrametric_matrices(), r=st.integers(1, 5))
    def test_preserves_structure(self, q, r):
        P = schur_power(OverlapMatrix(q), r)
        assert np.array_equal(P.q, P.q.T)
        assert np.all(np.diag(P.q) == 1.0)
        assert psd_min_eigenvalue(P) >= -1e-8
        assert is_ultrametric(P).ok


class TestUltrametric:
    def test_identity(self):
        assert is_ultrametric(OverlapMatrix.identity(6)).ok

    def test_isoceles(self):
        q = np.array([[1, 0.8, 0.3], [0.8, 1, 0.3], [0.3, 0.3, 1]])
        assert is_ultrametric(OverlapMatrix(q)).ok

    def test_violation_triple(self):
        q = np.array([[1, 0.8, 0.5], [0.8, 1, 0.3], [0.5, 0.3, 1]])
        res = is_ultrametric(OverlapMatrix(q))
        assert not res.ok
        # particles 2, 3 and 1 in 1-based numbering
        assert res.triple == (1, 2, 0)
        assert not bool(res)
        assert ultrametric_excess(OverlapMatrix(q)) == pytest.approx(0.2)

    @settings(max_examples=40, deadline=None)
    @given(q=ultrametric_matrices())
    def test_nested_labels_are_ultrametric(self, q):
        assert is_ultrametric(OverlapMatrix(q)).ok
        assert ultrametric_excess(OverlapMatrix(q)) <= 1e-12

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(3, 9), seed=st.integers(0, 10**6))
    def test_matches_brute_force(self, n, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(n, 3))
        g = a @ a.T
        s = np.sqrt(np.diag(g))
        q = g / np.outer(s, s)
        np.fill_diagonal(q, 1.0)
        q = (q + q.T) / 2
        assert is_ultrametric(OverlapMatrix(q), tol=1e-12).ok == brute_ultrametric(q)

    def test_large_matrix_fast_path(self):
        q = build_rpc(RpcParams((0.1, 0.4, 0.7), (0.2, 0.5, 0.8)), 32, seed=1).to_rost(100).overlaps
        assert is_ultrametric(q).ok
        bad = q.q.copy()
        bad[3, 50] = bad[50, 3] = 0.99
        assert not is_ultrametric(OverlapMatrix(bad)).ok


class TestDistance:
    def test_zero(self):
        a = rost_of(nested_overlaps(np.array([[0], [0], [1]]), [0.1, 0.6]))
        assert rost_distance(a, a) == 0.0

    def test_single_entry(self):
        delta = 0.3
        q = np.eye(3)
        p = np.eye(3)
        p[0, 1] = p[1, 0] = delta
        assert overlap_distance(OverlapMatrix(q), OverlapMatrix(p)).value == pytest.approx(delta / 4)
        assert rost_distance(rost_of(q), rost_of(p)) == pytest.approx(delta / 4)

    @pytest.mark.parametrize("n", [2, 3, 6])
    def test_identity_vs_ones(self, n):
        ones = np.ones((n, n))
        expected = sum(2.0 ** (-i - j) for i in range(1, n + 1) for j in range(1, n + 1) if i != j)
        d = overlap_distance(OverlapMatrix.identity(n), OverlapMatrix(ones))
        assert d.value == pytest.approx(expected)

    def test_tail_bound(self):
        n = 5
        tail = 2 * sum(
            2.0 ** (-i - j) for i in range(1, 60) for j in range(1, 60) if max(i, j) > n
        )
        assert metric_tail_bound(n) == pytest.approx(tail)

    def test_mismatched_sizes_pad(self):
        a = rost_of(np.eye(2))
        b = rost_of(np.eye(3))
        # masses (0.5, 0.5, 0) vs (1/3, 1/3, 1/3); overlaps agree after padding
        assert rost_distance(a, b) == pytest.approx(1 / 3)

    @settings(max_examples=30, deadline=None)
    @given(a=ultrametric_matrices(6), b=ultrametric_matrices(6), c=ultrametric_matrices(6))
    def test_pseudometric(self, a, b, c):
        ra, rb, rc = rost_of(a), rost_of(b), rost_of(c)
        assert rost_distance(ra, rb) == pytest.approx(rost_distance(rb, ra), abs=1e-15)
        assert rost_distance(ra, rc) <= rost_distance(ra, rb) + rost_distance(rb, rc) + 1e-12


class TestOverlapFunctions:
    def test_identity(self):
        Q = OverlapMatrix(two_by_two(0.3))
        assert apply_overlap_function(Q, lambda x: x) == Q

    def test_f_alpha(self):
        out = apply_overlap_function(OverlapMatrix(two_by_two(0.5)), f_alpha(0.5))
        assert out.q[0, 1] == pytest.approx(0.25)
        assert out.q[0, 0] == 1.0

    def test_must_fix_one(self):
        with pytest.raises(ParameterError):
            apply_overlap_function(OverlapMatrix.identity(2), lambda x: 0.5 * np.asarray(x))

    def test_psd_failure_reported(self):
        # maps -0.5 to -1: eigenvalues of the 3x3 all -1 off-diagonal matrix go negative
        q = np.full((3, 3), -0.5)
        np.fill_diagonal(q, 1.0)
        f = step_function([-1.0, 0.0], [-1.0, 0.0])
        with pytest.raises(NotPositiveSemidefinite) as info:
            apply_overlap_function(OverlapMatrix(q), f)
        assert info.value.min_eigenvalue < -1e-8

    @settings(max_examples=30, deadline=None)
    @given(q=ultrametric_matrices(), cut=st.floats(0.05, 0.9), val=st.floats(0.0, 0.99))
    def test_step_keeps_ultrametric_psd(self, q, cut, val):
        # non-decreasing step fixing 0 and 1
        f = step_function([0.0, cut], [0.0, max(val, 0.0)])
        out = apply_overlap_function(OverlapMatrix(q), f)
        assert is_ultrametric(out).ok
        assert psd_min_eigenvalue(out) >= -1e-8


class TestStateSpace:
    def test_identity(self):
        Q = OverlapMatrix.identity(4)
        assert list(state_space(Q).values) == [0.0]
        assert is_indecomposable(Q)

    def test_needs_two(self):
        with pytest.raises(ParameterError):
            state_space(OverlapMatrix.identity(1))

    def test_cascade_levels(self):
        params = RpcParams((0.1, 0.4, 0.7), (0.2, 0.5, 0.8))
        q = build_rpc(params, 16, seed=4).to_rost(64).overlaps
        assert state_space(q).issubset(params.q_levels)

    def test_block_superposition_decomposable(self):
        a = nested_overlaps(np.array([[0], [0], [1]]), [0.1, 0.5])
        b = nested_overlaps(np.array([[0], [0]]), [0.2, 0.7])
        q = np.zeros((5, 5))
        q[:3, :3] = a
        q[3:, 3:] = b
        assert not is_indecomposable(OverlapMatrix(q))

    def test_merge_tolerance(self):
        q = np.array([[1, 0.3, 0.3 + 1e-12], [0.3, 1, 0.3], [0.3 + 1e-12, 0.3, 1]])
        assert state_space(OverlapMatrix(q)).values.size == 1
