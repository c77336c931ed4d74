import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rpcsim.errors import InfeasibleError, NotPositiveSemidefinite, ParameterError
from rpcsim.evolution import (
    EvolutionConfig,
    SuperposedGenealogy,
    build_superposition,
    crowd_velocity,
    estimate_velocity,
    evolve,
    match_velocities,
    past_velocity_formula,
    phi,
    psd_factor,
    sample_increments,
)
from rpcsim.pd import MassPartition
from rpcsim.rost import OverlapMatrix, Rost, is_indecomposable, is_ultrametric, schur_power
from rpcsim.rpc import RpcParams, build_rpc

TWO = RpcParams((0.2, 0.5), (0.3, 0.6))


def rost(atoms, q):
    return Rost(MassPartition(np.asarray(atoms, dtype=float)), OverlapMatrix(np.asarray(q, dtype=float)))


Q3 = np.array([[1.0, 0.5, 0.2], [0.5, 1.0, 0.2], [0.2, 0.2, 1.0]])


class TestConfig:
    def test_rejects(self):
        for kw in ({"r": 0}, {"r": 1.5}, {"lam": 0.0}, {"psi": "cubic"}):
            with pytest.raises(ParameterError):
                EvolutionConfig(**kw)


class TestIncrements:
    def test_psd_factor(self):
        f = psd_factor(Q3)
        assert np.allclose(f @ f.T, Q3)

    def test_psd_failure(self):
        with pytest.raises(NotPositiveSemidefinite):
            psd_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))

    @pytest.mark.parametrize("r", [1, 2, 3])
    def test_matrix_covariance(self, rng, r):
        draws = np.array([sample_increments(Q3, r, rng).values for _ in range(20000)])
        assert np.allclose(np.cov(draws.T), schur_power(OverlapMatrix(Q3), r).q, atol=0.04)

    @pytest.mark.parametrize("r", [1, 2])
    def test_tree_covariance(self, rng, r):
        g = build_rpc(TWO, 3, rng)
        draws = np.array([sample_increments(g, r, rng).values for _ in range(20000)])
        depth = g.ancestor_depth(np.arange(g.n_leaves))
        expected = g.params.depth_overlaps[depth] ** r
        np.fill_diagonal(expected, 1.0)
        assert np.allclose(np.cov(draws.T), expected, atol=0.05)

    def test_bad_r(self):
        with pytest.raises(ParameterError):
            sample_increments(Q3, 0)


class TestEvolve:
    def test_reweight_example(self):
        out, perm = evolve(rost([0.6, 0.4], np.eye(2)), np.array([math.log(2.0), 0.0]))
        assert np.allclose(out.masses.atoms, [0.75, 0.25])
        assert list(perm) == [0, 1]

    def test_reorder_example(self):
        q = np.array([[1.0, 0.3], [0.3, 1.0]])
        start = rost([0.6, 0.4], q)
        out, perm = evolve(start, np.array([0.0, math.log(4.0)]))
        assert list(perm) == [1, 0]
        assert np.allclose(out.masses.atoms, [1.6 / 2.2, 0.6 / 2.2])
        assert np.array_equal(out.overlaps.q, q[perm][:, perm])

    @given(
        atoms=st.lists(st.floats(0.01, 1.0), min_size=1, max_size=8),
        shift=st.floats(-3, 3),
    )
    def test_constant_increment_is_identity(self, atoms, shift):
        a = np.sort(np.array(atoms))[::-1]
        a = a / a.sum()
        start = rost(a, np.eye(a.size))
        out, perm = evolve(start, np.full(a.size, shift), lam=1.7)
        assert np.allclose(out.masses.atoms, a)
        assert np.array_equal(perm, np.arange(a.size))

    def test_single_particle_fixed(self, rng):
        start = rost([1.0], [[1.0]])
        for _ in range(5):
            start = phi(start, EvolutionConfig(r=2, lam=3.0), rng)
        assert start.masses.atoms[0] == pytest.approx(1.0)

    def test_mass_conserved_and_sorted(self, rng):
        g = build_rpc(TWO, 16, rng).to_rost(40)
        out = phi(g, EvolutionConfig(r=1, lam=2.0), rng)
        assert out.masses.total == pytest.approx(1.0)
        assert np.all(np.diff(out.masses.atoms) <= 0)
        assert is_ultrametric(out.overlaps).ok

    def test_size_mismatch(self):
        with pytest.raises(ParameterError):
            evolve(rost([1.0], [[1.0]]), np.zeros(2))

    def test_tree_phi_keeps_genealogy(self, rng):
        g = build_rpc(TWO, 8, rng)
        h = phi(g, EvolutionConfig(r=1, lam=1.0), rng)
        assert h.params == g.params
        assert h.weights.sum() == pytest.approx(1.0)
        assert not np.allclose(h.log_weights, g.log_weights)


class TestVelocity:
    def test_crowd_one_level(self):
        op = RpcParams((0.0,), (0.5,)).order_param()
        assert crowd_velocity(op, 1, 1.0) == pytest.approx(0.25)
        assert crowd_velocity(op, 1, 2.0) == pytest.approx(1.0)
        assert past_velocity_formula(op, 1, 1.0) == pytest.approx(0.5)

    def test_crowd_two_level(self):
        op = TWO.order_param()
        # jumps 0.3 at q = 0.2 and 0.3 at q = 0.5
        for r in (1, 2, 3):
            want = 0.5 * (0.3 * (1 - 0.2**r) + 0.3 * (1 - 0.5**r))
            assert crowd_velocity(op, r, 1.0) == pytest.approx(want)

    @given(lam=st.floats(0.1, 5.0), r=st.integers(1, 6))
    def test_lambda_squared_scaling(self, lam, r):
        op = TWO.order_param()
        assert crowd_velocity(op, r, lam) == pytest.approx(lam**2 * crowd_velocity(op, r, 1.0))

    def test_large_r_limit(self):
        assert crowd_velocity(TWO.order_param(), 200, 1.0) == pytest.approx(0.5 * TWO.zeta, rel=1e-9)

    def test_estimate_matches_crowd(self):
        params = RpcParams((0.0,), (0.5,))
        est = estimate_velocity(params, EvolutionConfig(r=1, lam=1.0), replicas=800, seed=3, M=1024)
        assert est.in_theory
        assert abs(est.mean - 0.25) < 4 * est.stderr + 0.01

    def test_not_in_theory_flag(self):
        est = estimate_velocity(TWO, EvolutionConfig(), replicas=4, M=32)
        assert not est.in_theory


class TestMatching:
    def test_one_moment(self):
        assert match_velocities((0.2,), (0.3,), (0.4,), R=1)[0] == pytest.approx(0.4)

    def test_identical_levels(self):
        x = match_velocities((0.2, 0.5), (0.3, 0.6), (0.2, 0.5), R=2)
        assert np.allclose(x, (0.3, 0.6))

    def test_overdetermined(self):
        with pytest.raises(InfeasibleError):
            match_velocities((0.2,), (0.3,), (0.4,), R=2)

    def test_infeasible_total(self):
        with pytest.raises(InfeasibleError):
            match_velocities((0.0,), (0.9,), (0.5,), R=1)

    @settings(max_examples=30)
    @given(qa=st.floats(0.05, 0.9), xa=st.floats(0.05, 0.5), qb=st.floats(0.05, 0.9))
    def test_residual(self, qa, xa, qb):
        try:
            (xb,) = match_velocities((qa,), (xa,), (qb,), R=1)
        except InfeasibleError:
            assert (1 - qa) * xa / (1 - qb) >= 1.0
            return
        assert (1 - qb) * xb == pytest.approx((1 - qa) * xa)


class TestSuperposition:
    def test_structure(self, rng):
        a = build_rpc(RpcParams((0.2,), (0.3,)), 32, rng).to_rost(12)
        b = build_rpc(RpcParams((0.4,), (0.4,)), 32, rng).to_rost(12)
        s = build_superposition(a, b, 0.4)
        assert s.n == 24
        assert s.masses.total == pytest.approx(1.0)
        assert is_ultrametric(s.overlaps).ok
        assert not is_indecomposable(s.overlaps)

    def test_weight_range(self):
        a = rost([1.0], [[1.0]])
        with pytest.raises(ParameterError):
            build_superposition(a, a, 1.0)

    def test_superposed_genealogy(self, rng):
        blocks = [build_rpc(TWO, 8, rng), build_rpc(RpcParams((0.4,), (0.5,)), 8, rng)]
        s = SuperposedGenealogy(blocks)
        assert s.block_masses().sum() == pytest.approx(1.0)
        assert s.normalized_masses().sum() == pytest.approx(1.0)
        cdf = s.overlap_cdf([0.0, 0.2, 0.5, 1.0])
        assert np.all(np.diff(cdf) >= -1e-12)
        r = s.to_rost(30)
        assert is_ultrametric(r.overlaps).ok
        assert not is_indecomposable(r.overlaps)
