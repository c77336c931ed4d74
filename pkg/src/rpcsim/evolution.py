"""Correlated Gaussian increments, the reweight-and-reorder map, and velocities."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .errors import InfeasibleError, NotPositiveSemidefinite, ParameterError
from .parallel import as_generator, replica_map
from .pd import MassPartition
from .rost import PSD_TOL, OverlapMatrix, Rost
from .rpc import GenealogySample, OrderParam, RpcParams, build_rpc

PSI_REGISTRY: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "linear": lambda k: k,
}


@dataclass(frozen=True)
class EvolutionConfig:
    r: int = 1
    lam: float = 1.0
    psi: str = "linear"

    def __post_init__(self):
        if int(self.r) != self.r or self.r < 1:
            raise ParameterError(f"Schur power r must be an integer >= 1, got {self.r}")
        if not self.lam > 0:
            raise ParameterError(f"lambda must be positive, got {self.lam}")
        if self.psi not in PSI_REGISTRY:
            raise ParameterError(f"unknown increment function {self.psi!r}; known: {sorted(PSI_REGISTRY)}")

    @property
    def psi_fn(self):
        return PSI_REGISTRY[self.psi]


@dataclass(frozen=True)
class IncrementField:
    values: np.ndarray

    def __len__(self):
        return self.values.size


def psd_factor(q: np.ndarray, psd_tol: float = PSD_TOL) -> np.ndarray:
    """F with F F^T = q, from the symmetric eigendecomposition with eigenvalues clipped at 0."""
    vals, vecs = np.linalg.eigh(q)
    if vals.size and vals[0] < -psd_tol:
        raise NotPositiveSemidefinite(float(vals[0]), psd_tol)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def tree_increments(sample: GenealogySample, r: int, rng) -> np.ndarray:
    """Path-sum Gaussian field with Cov(kappa_a, kappa_b) = q_{l(a,b)+1}^r.

    The root carries variance q_1^r, a depth-m node q_{m+1}^r - q_m^r and a
    leaf 1 - q_k^r.
    """
    k, M = sample.k, sample.M
    levels = np.append(np.asarray(sample.params.q_levels) ** r, 1.0)
    var = np.diff(np.concatenate(([0.0], levels)))
    kappa = np.zeros((M,) * k)
    for depth in range(k + 1):
        if var[depth] <= 0:
            continue
        g = rng.standard_normal((M,) * depth) * math.sqrt(var[depth])
        kappa = kappa + np.reshape(g, g.shape + (1,) * (k - depth))
    return kappa.ravel()


def sample_increments(source, r: int, seed=None) -> IncrementField:
    """Gaussian vector with covariance Q^{*r} for a tree, a Rost or an overlap matrix."""
    if int(r) != r or r < 1:
        raise ParameterError("r must be an integer >= 1")
    rng = as_generator(seed)
    if isinstance(source, GenealogySample):
        return IncrementField(tree_increments(source, r, rng))
    if isinstance(source, SuperposedGenealogy):
        return IncrementField(np.concatenate([tree_increments(b, r, rng) for b in source.blocks]))
    if isinstance(source, Rost):
        source = source.overlaps
    q = source.q if isinstance(source, OverlapMatrix) else np.asarray(source, dtype=float)
    f = psd_factor(q**r)
    return IncrementField(f @ rng.standard_normal(q.shape[0]))


def _order(weights: np.ndarray) -> np.ndarray:
    # stable sort: equal weights keep their original order
    return np.argsort(-weights, kind="stable")


def evolve(rost: Rost, kappa: IncrementField | np.ndarray, lam: float = 1.0, psi: str = "linear"):
    """One reweight-renormalize-reorder step; returns (new Rost, pi) with Q' = Q[pi][:, pi]."""
    k = kappa.values if isinstance(kappa, IncrementField) else np.asarray(kappa, dtype=float)
    xi = rost.masses.atoms
    if k.size != xi.size:
        raise ParameterError(f"{k.size} increments for {xi.size} particles")
    total = float(xi.sum())
    if total == 0.0:
        return rost, np.arange(xi.size)
    with np.errstate(divide="ignore"):
        logw = np.log(xi) + lam * PSI_REGISTRY[psi](k)
    w = np.exp(logw - logsumexp(logw)) * total
    perm = _order(w)
    new_atoms = np.minimum.accumulate(w[perm])
    masses = MassPartition(new_atoms, rost.masses.residual_mass, rost.masses.truncation)
    return Rost(masses, rost.overlaps.permuted(perm)), perm


def phi(state, config: EvolutionConfig, seed=None):
    """Phi_{r,lambda}. Trees (and superpositions of trees) keep their genealogy:
    the evolved object is the same tree with reweighted leaves."""
    rng = as_generator(seed)
    if isinstance(state, GenealogySample):
        kappa = tree_increments(state, config.r, rng)
        return state.with_log_weights(state.log_weights + config.lam * config.psi_fn(kappa))
    if isinstance(state, SuperposedGenealogy):
        return SuperposedGenealogy([phi(b, config, rng) for b in state.blocks])
    kappa = sample_increments(state, config.r, rng)
    return evolve(state, kappa, config.lam, config.psi)[0]


# ------------------------------------------------------------------- superpositions


@dataclass
class SuperposedGenealogy:
    """Union of independent cascade trees; particles in different trees overlap 0.

    Each tree keeps its unnormalized log weights, so the relative block weight
    is the ratio of the underlying Poisson totals.
    """

    blocks: list = field(default_factory=list)

    @property
    def log_weights(self) -> np.ndarray:
        return np.concatenate([b.log_weights for b in self.blocks])

    def block_masses(self) -> np.ndarray:
        tot = np.array([logsumexp(b.log_weights) for b in self.blocks])
        return np.exp(tot - logsumexp(tot))

    def normalized_masses(self) -> np.ndarray:
        lw = self.log_weights
        return np.exp(lw - logsumexp(lw))

    def overlap_cdf(self, grid) -> np.ndarray:
        grid = np.asarray(grid, dtype=float)
        bm = self.block_masses()
        out = (1.0 - np.sum(bm**2)) * (grid >= 0.0)
        for w, b in zip(bm, self.blocks):
            out = out + w**2 * b.overlap_cdf(grid)
        return out

    def sample_pair_overlap(self, rng) -> float:
        bm = self.block_masses()
        a, b = np.minimum(np.searchsorted(np.cumsum(bm), rng.random(2) * bm.sum(), side="right"), bm.size - 1)
        if a != b:
            return 0.0
        blk = self.blocks[a]
        cum = np.cumsum(blk.weights)
        i, j = np.minimum(np.searchsorted(cum, rng.random(2) * cum[-1], side="right"), cum.size - 1)
        if i == j:
            return 1.0
        return float(blk.params.depth_overlaps[int(kernels.shared_depth(blk.multi_index([i, j]))[0, 1])])

    def view_power(self, r: int) -> "SuperposedGenealogy":
        return SuperposedGenealogy([b.view_power(r) for b in self.blocks])

    def to_rost(self, n: int) -> Rost:
        """The n heaviest particles overall with block-diagonal overlaps."""
        lw = self.log_weights
        offsets = np.cumsum([0] + [b.n_leaves for b in self.blocks])
        top = np.argsort(-lw, kind="stable")[:n]
        which = np.searchsorted(offsets, top, side="right") - 1
        q = np.zeros((n, n))
        for bi, blk in enumerate(self.blocks):
            idx = np.nonzero(which == bi)[0]
            if idx.size:
                depth = blk.ancestor_depth(top[idx] - offsets[bi])
                q[np.ix_(idx, idx)] = blk.params.depth_overlaps[depth]
        np.fill_diagonal(q, 1.0)
        w = np.minimum.accumulate(np.exp(lw[top] - logsumexp(lw)))
        return Rost(MassPartition(w, max(0.0, 1.0 - float(w.sum())), self.blocks[0].M), OverlapMatrix(q))


def build_superposition(a: Rost, b: Rost, w: float) -> Rost:
    """Union with masses w xi^A and (1-w) xi^B, cross overlaps 0, merged in descending order."""
    if not 0.0 < w < 1.0:
        raise ParameterError("superposition weight must lie in (0, 1)")
    ma = w * a.masses.atoms
    mb = (1.0 - w) * b.masses.atoms
    allm = np.concatenate((ma, mb))
    perm = _order(allm)
    na = ma.size
    q = np.zeros((allm.size, allm.size))
    q[:na, :na] = a.overlaps.q
    q[na:, na:] = b.overlaps.q
    residual = w * a.masses.residual_mass + (1.0 - w) * b.masses.residual_mass
    masses = MassPartition(np.minimum.accumulate(allm[perm]), residual, max(a.masses.truncation, b.masses.truncation))
    return Rost(masses, OverlapMatrix(q[np.ix_(perm, perm)]))


# ------------------------------------------------------------------- velocities


def crowd_velocity(op: OrderParam, r: int, lam: float) -> float:
    """lambda^2 / 2 * int_0^1 (1 - q^r) dx(q)."""
    return lam**2 / 2.0 * op.integrate(lambda q: 1.0 - np.asarray(q) ** r)


def past_velocity_formula(op: OrderParam, r: int, lam: float) -> float:
    """lambda * int (1 - q^r) dx(q); x(q) vanishes below 0 for these order parameters."""
    return lam * op.integrate(lambda q: 1.0 - np.asarray(q) ** r)


class VelocityEstimate(NamedTuple):
    mean: float
    stderr: float
    replicas: int
    in_theory: bool


def _log_total(rng, params, config, M, inner):
    g = build_rpc(params, M, rng)
    lw = g.log_weights - logsumexp(g.log_weights)
    tot = [logsumexp(lw + config.lam * config.psi_fn(tree_increments(g, config.r, rng))) for _ in range(inner)]
    return float(np.mean(tot))


def estimate_velocity(
    params: RpcParams,
    config: EvolutionConfig,
    replicas: int,
    seed: int = 0,
    M: int = 4096,
    workers: int = 1,
    inner_draws: int = 16,
) -> VelocityEstimate:
    """Mean of log sum_j xi_j e^{lambda kappa_j}: the log-shift of the reweighted cascade.

    Each replica draws one partition and averages ``inner_draws`` independent
    increment fields on it; most of the variance comes from the increments.
    The shift is only deterministic when q_1 = 0; otherwise the estimate is
    still returned with ``in_theory=False``.
    """
    vals = np.array(
        replica_map(
            _log_total, replicas, seed, f"velocity/{config.r}/{config.lam}", (params, config, M, inner_draws), workers
        )
    )
    se = float(vals.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else 0.0
    return VelocityEstimate(float(vals.mean()), se, replicas, params.q_levels[0] == 0.0)


def velocity_system(q_levels: Sequence[float], R: int) -> np.ndarray:
    q = np.asarray(q_levels, dtype=float)
    r = np.arange(1, R + 1)[:, None]
    return 1.0 - q[None, :] ** r


def match_velocities(
    q_levels_a: Sequence[float],
    x_levels_a: Sequence[float],
    q_levels_b: Sequence[float],
    R: int,
    tol: float = 1e-12,
) -> tuple:
    """x levels for B so that sum (1 - q^r) dx agrees with A for r = 1..R.

    Unknowns are B's jump sizes. Square systems are solved directly, others in
    least squares; a residual above ``tol``, a rank-deficient system, or jumps
    that are not positive with total below 1 raise ``InfeasibleError``.
    """
    if R < 1:
        raise ParameterError("R must be >= 1")
    dx_a = np.diff(np.concatenate(([0.0], np.asarray(x_levels_a, dtype=float))))
    target = velocity_system(q_levels_a, R) @ dx_a
    A = velocity_system(q_levels_b, R)
    rank = int(np.linalg.matrix_rank(A))
    if rank < min(A.shape):
        raise InfeasibleError(f"velocity system is rank deficient (rank {rank} of {min(A.shape)})", rank=rank)
    if A.shape[0] == A.shape[1]:
        dx_b = np.linalg.solve(A, target)
    else:
        dx_b = np.linalg.lstsq(A, target, rcond=None)[0]
    residual = float(np.max(np.abs(A @ dx_b - target)))
    if residual > tol:
        raise InfeasibleError(f"no exact solution: residual {residual:.3e}", residual=residual, rank=rank)
    if np.any(dx_b <= 0) or dx_b.sum() >= 1.0:
        raise InfeasibleError(f"solution {dx_b} violates 0 < x_1 < ... < x_k < 1", residual=residual, rank=rank)
    return tuple(np.cumsum(dx_b))
